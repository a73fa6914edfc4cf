#include "cebundle/cli.hpp"

int main(int argc, char** argv) { return cebundle::run_cli(argc, argv); }

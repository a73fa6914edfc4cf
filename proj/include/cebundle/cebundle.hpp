#pragma once

#include "cebundle/bundling.hpp"
#include "cebundle/core.hpp"
#include "cebundle/errors.hpp"
#include "cebundle/evaluate.hpp"
#include "cebundle/inference.hpp"
#include "cebundle/io.hpp"
#include "cebundle/losses.hpp"
#include "cebundle/metrics.hpp"
#include "cebundle/model.hpp"
#include "cebundle/rng.hpp"
#include "cebundle/scorer.hpp"
#include "cebundle/synthetic.hpp"
#include "cebundle/train.hpp"
#include "cebundle/verify.hpp"

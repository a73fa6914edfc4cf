#pragma once

#include <string>

#include "cebundle/core.hpp"
#include "cebundle/io.hpp"
#include "cebundle/scorer.hpp"

namespace cebundle {

/// A scorer together with the vocabulary its token ids refer to.
struct Model {
  Vocab vocab;
  ScorerParams params;
};

inline json dims_to_json(const Dims& d) {
  return json{{"embed", d.embed}, {"position", d.position}, {"hidden", d.hidden},
              {"max_len", d.max_len}};
}

inline Dims dims_from_json(const json& j, Dims d = {}) {
  d.embed = j.value("embed", d.embed);
  d.position = j.value("position", d.position);
  d.hidden = j.value("hidden", d.hidden);
  d.max_len = j.value("max_len", d.max_len);
  return d;
}

// {"dims": {...}, "vocab": [str], "params": {name: flat row-major array}}
inline json to_json(const Model& m) {
  json params = json::object();
  m.params.for_each_tensor(
      [&](std::string_view name, const std::vector<double>& t) { params[std::string(name)] = t; });
  return json{{"dims", dims_to_json(m.params.dims)},
              {"vocab", m.vocab.tokens()},
              {"params", params}};
}

inline Model model_from_json(const json& j) {
  Model m;
  const auto tokens = j.at("vocab").get<Tokens>();
  static const char* reserved[] = {"<bos>", "<eos>", "<pad>", "<unk>"};
  if (tokens.size() < Vocab::kNumReserved) throw ArgumentError("model vocab too small");
  for (std::size_t i = 0; i < Vocab::kNumReserved; ++i)
    if (tokens[i] != reserved[i]) throw ArgumentError("model vocab lacks reserved tokens");
  m.vocab = Vocab(Tokens(tokens.begin() + Vocab::kNumReserved, tokens.end()));
  if (m.vocab.size() != tokens.size()) throw ArgumentError("model vocab has duplicate tokens");

  m.params = ScorerParams::zeros(dims_from_json(j.at("dims")), m.vocab.size());
  const auto& ps = j.at("params");
  m.params.for_each_tensor([&](std::string_view name, std::vector<double>& t) {
    auto v = ps.at(std::string(name)).get<std::vector<double>>();
    if (v.size() != t.size())
      throw ArgumentError("parameter '" + std::string(name) + "' has wrong size");
    t = std::move(v);
  });
  if (!m.params.all_finite()) throw ArgumentError("model contains non-finite parameters");
  return m;
}

inline void save_model(const std::string& path, const Model& m) {
  detail::write_file(path, to_json(m).dump() + "\n");
}

inline Model load_model(const std::string& path) {
  try {
    return model_from_json(json::parse(detail::read_file(path)));
  } catch (const json::exception& e) {
    throw ArgumentError(path + ": " + e.what());
  }
}

}  // namespace cebundle

#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cebundle/core.hpp"
#include "json.hpp"

namespace cebundle {

using json = nlohmann::ordered_json;

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArgumentError("cannot write file: " + path);
  out << content;
  if (!out) throw ArgumentError("write failed: " + path);
}

template <typename Fn>
void for_each_jsonl(const std::string& path, Fn&& fn) {
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ArgumentError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    try {
      fn(j);
    } catch (const json::exception& e) {
      throw ArgumentError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace detail

inline json to_json(const QAInstance& i) {
  return json{{"id", i.id},
              {"context", join(i.context)},
              {"question", join(i.question)},
              {"answer", join(i.answer)}};
}

inline QAInstance instance_from_json(const json& j) {
  QAInstance i{j.at("id").get<std::string>(), tokenize(j.at("context").get<std::string>()),
               tokenize(j.at("question").get<std::string>()),
               tokenize(j.at("answer").get<std::string>())};
  if (i.id.empty()) throw ArgumentError("instance with empty id");
  if (i.question.empty() || i.answer.empty())
    throw ArgumentError("instance " + i.id + " has an empty question or answer");
  return i;
}

inline json to_json(const InstanceBundle& b) {
  json qs = json::array(), as = json::array(), gold = json::array();
  for (const auto& q : b.questions) qs.push_back(join(q));
  for (const auto& a : b.answers) as.push_back(join(a));
  for (const auto& g : b.gold) gold.push_back(json::array({g.question, g.answer}));
  return json{{"bundle_id", b.bundle_id}, {"context", join(b.context)},
              {"questions", qs},          {"answers", as},
              {"gold", gold},             {"source", std::string(to_string(b.source))}};
}

inline InstanceBundle bundle_from_json(const json& j) {
  InstanceBundle b;
  b.bundle_id = j.at("bundle_id").get<std::string>();
  b.context = tokenize(j.at("context").get<std::string>());
  for (const auto& q : j.at("questions")) b.questions.push_back(tokenize(q.get<std::string>()));
  for (const auto& a : j.at("answers")) b.answers.push_back(tokenize(a.get<std::string>()));
  for (const auto& g : j.at("gold")) {
    if (!g.is_array() || g.size() != 2) throw ArgumentError("gold entries must be [int,int]");
    long q = g[0].get<long>(), a = g[1].get<long>();
    if (q < 0 || a < 0) throw ArgumentError("negative gold index in " + b.bundle_id);
    b.gold.push_back({static_cast<std::size_t>(q), static_cast<std::size_t>(a)});
  }
  b.source = bundle_source_from_string(j.value("source", std::string("synthetic")));
  return b;
}

inline std::vector<QAInstance> read_instances(const std::string& path) {
  std::vector<QAInstance> out;
  detail::for_each_jsonl(path, [&](const json& j) { out.push_back(instance_from_json(j)); });
  return out;
}

inline std::vector<InstanceBundle> read_bundles(const std::string& path) {
  std::vector<InstanceBundle> out;
  detail::for_each_jsonl(path, [&](const json& j) { out.push_back(bundle_from_json(j)); });
  return out;
}

template <typename T>
std::string to_jsonl(const std::vector<T>& items) {
  std::string out;
  for (const auto& it : items) {
    out += to_json(it).dump();
    out.push_back('\n');
  }
  return out;
}

inline void write_instances(const std::string& path, const std::vector<QAInstance>& items) {
  detail::write_file(path, to_jsonl(items));
}

inline void write_bundles(const std::string& path, const std::vector<InstanceBundle>& items) {
  detail::write_file(path, to_jsonl(items));
}

}  // namespace cebundle

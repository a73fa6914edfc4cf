#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cebundle/bundling.hpp"
#include "cebundle/core.hpp"
#include "cebundle/errors.hpp"
#include "cebundle/evaluate.hpp"
#include "cebundle/io.hpp"
#include "cebundle/losses.hpp"
#include "cebundle/model.hpp"
#include "cebundle/synthetic.hpp"
#include "cebundle/train.hpp"
#include "cebundle/verify.hpp"

namespace cebundle {

namespace detail {

inline ContrastTables tables_or_default(const std::string& path) {
  if (!path.empty()) return load_contrast_tables(path);
  const auto res = default_contrast_tables_path();
  if (std::filesystem::exists(res)) return load_contrast_tables(res);
  return default_contrast_tables();
}

inline void write_json(const std::string& path, const json& j) {
  write_file(path, j.dump(2) + "\n");
}

struct TrainArgs {
  std::string data, bundles, dev_data, dev_bundles, init_model, out, config;
  std::string loss = "ce-qc", compat = "ln";
  double alpha1 = 1.0, alpha2 = 1.0, lambda1 = 0.5, lambda2 = 0.5, lr = 1e-2;
  bool ul_per_token = true;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
};

// Fills every field not given on the command line from the config file.
inline void apply_train_config(TrainArgs& a, const CLI::App& cmd, Dims& dims) {
  if (a.config.empty()) return;
  json j;
  try {
    j = json::parse(read_file(a.config));
  } catch (const json::exception& e) {
    throw ArgumentError(a.config + ": " + e.what());
  }
  if (!j.is_object()) throw ArgumentError(a.config + ": config must be a JSON object");
  auto take = [&](const char* key, const char* flag, auto& field) {
    if (j.contains(key) && cmd.count(flag) == 0) {
      try {
        field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
      } catch (const json::exception& e) {
        throw ArgumentError(std::string("config key '") + key + "': " + e.what());
      }
    }
  };
  take("data", "--data", a.data);
  take("bundles", "--bundles", a.bundles);
  take("dev_data", "--dev-data", a.dev_data);
  take("dev_bundles", "--dev-bundles", a.dev_bundles);
  take("init_model", "--init-model", a.init_model);
  take("out", "--out", a.out);
  take("loss", "--loss", a.loss);
  take("compat", "--compat", a.compat);
  take("alpha1", "--alpha1", a.alpha1);
  take("alpha2", "--alpha2", a.alpha2);
  take("lambda1", "--lambda1", a.lambda1);
  take("lambda2", "--lambda2", a.lambda2);
  take("ul_per_token", "--ul-per-token", a.ul_per_token);
  take("lr", "--lr", a.lr);
  take("epochs", "--epochs", a.epochs);
  take("seed", "--seed", a.seed);
  if (j.contains("dims")) dims = dims_from_json(j.at("dims"), dims);
}

inline Dataset load_dataset(const std::string& instances, const std::string& bundles) {
  Dataset d;
  if (!instances.empty()) d.instances = read_instances(instances);
  if (!bundles.empty()) d.bundles = read_bundles(bundles);
  for (const auto& b : d.bundles) {
    auto v = validate_bundle(b);
    if (!v.empty()) throw ArgumentError("invalid bundle " + b.bundle_id + ": " + v.front());
  }
  return d;
}

}  // namespace detail

/// Entry point of the command-line tool. Exit codes: 0 success, 1 user
/// error, 2 internal error or failed verification.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Contrastive estimation over instance bundles"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic comparison QA corpus");
  GeneratorConfig gcfg;
  std::string gen_out = ".";
  gen->add_option("--seed", gcfg.seed, "Random seed");
  gen->add_option("--n-train", gcfg.n_train_bundles, "Training bundles");
  gen->add_option("--n-dev", gcfg.n_dev_bundles, "Dev bundles");
  gen->add_option("--entities", gcfg.entity_pool_size, "Entity pool size");
  gen->add_option("--attributes", gcfg.attribute_pool_size, "Attribute pool size");
  gen->add_option("--out", gen_out, "Output directory");

  // mine
  auto* mine = app.add_subcommand("mine", "Cluster near-duplicate questions into bundles");
  std::string mine_in, mine_out;
  MiningConfig mcfg;
  mine->add_option("--input", mine_in, "Instances file")->required();
  mine->add_option("--threshold", mcfg.jaccard_threshold, "Jaccard threshold");
  mine->add_option("--max-cluster", mcfg.max_cluster_size, "Largest cluster");
  mine->add_option("--out", mine_out, "Bundles file")->required();

  // augment
  auto* aug = app.add_subcommand("augment", "Generate contrast questions for multiple-choice questions");
  std::string aug_in, aug_out, aug_tables;
  aug->add_option("--input", aug_in, "Instances file")->required();
  aug->add_option("--out", aug_out, "Bundles file")->required();
  aug->add_option("--tables", aug_tables, "Antonym / verb table JSON");

  // sample-negatives
  auto* neg = app.add_subcommand("sample-negatives", "Build top-k bundles from a trained model");
  std::string neg_model, neg_in, neg_out;
  SamplingConfig scfg;
  neg->add_option("--model", neg_model, "Model file")->required();
  neg->add_option("--input", neg_in, "Instances file")->required();
  neg->add_option("--k", scfg.k, "Negatives per question");
  neg->add_option("--nucleus-p", scfg.nucleus_p, "Nucleus mass");
  neg->add_option("--nucleus-steps", scfg.nucleus_steps, "Sampled steps before greedy");
  neg->add_option("--seed", scfg.seed, "Random seed");
  neg->add_option("--out", neg_out, "Bundles file")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train a scorer");
  detail::TrainArgs ta;
  tr->add_option("--config", ta.config, "JSON config; flags override it");
  tr->add_option("--data", ta.data, "Instances file");
  tr->add_option("--bundles", ta.bundles, "Bundles file");
  tr->add_option("--dev-data", ta.dev_data, "Dev instances file");
  tr->add_option("--dev-bundles", ta.dev_bundles, "Dev bundles file");
  tr->add_option("--loss", ta.loss, "mle|ul|ce-ac|ce-qc|ce-tw|ce-ml|ce-jt|ce-fp");
  tr->add_option("--compat", ta.compat, "ln|un|gs");
  tr->add_option("--alpha1", ta.alpha1, "MLE weight");
  tr->add_option("--alpha2", ta.alpha2, "Variant weight");
  tr->add_option("--lambda1", ta.lambda1, "Two-way answer-conditional weight");
  tr->add_option("--lambda2", ta.lambda2, "Two-way question-conditional weight");
  tr->add_option("--ul-per-token", ta.ul_per_token, "Unlikelihood per decoding step");
  tr->add_option("--lr", ta.lr, "Learning rate");
  tr->add_option("--epochs", ta.epochs, "Epochs");
  tr->add_option("--seed", ta.seed, "Random seed");
  tr->add_option("--init-model", ta.init_model, "Start from this model");
  tr->add_option("--out", ta.out, "Model file");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a model");
  std::string ev_model, ev_data, ev_bundles, ev_mode = "independent", ev_compat = "ln", ev_out,
                                                   ev_preds, ev_tables;
  bool ev_augment = false;
  std::size_t ev_diag = 0;
  std::uint64_t ev_seed = 0;
  ev->add_option("--model", ev_model, "Model file")->required();
  ev->add_option("--data", ev_data, "Instances file");
  ev->add_option("--bundles", ev_bundles, "Bundles file");
  ev->add_option("--mode", ev_mode, "independent|joint");
  ev->add_option("--compat", ev_compat, "ln|un|gs");
  ev->add_flag("--augment-at-test", ev_augment, "Generate contrast bundles at test time");
  ev->add_option("--tables", ev_tables, "Antonym / verb table JSON");
  ev->add_option("--diagnose-sample", ev_diag, "Also compute posterior diagnostics on N instances");
  ev->add_option("--seed", ev_seed, "Random seed for diagnostics");
  ev->add_option("--out", ev_out, "Report file");
  ev->add_option("--predictions", ev_preds, "Predictions file");

  // diagnose
  auto* dg = app.add_subcommand("diagnose", "Entropy and top-2 ratio of the answer posterior");
  std::string dg_model, dg_data, dg_out;
  DiagnoseConfig dcfg;
  dg->add_option("--model", dg_model, "Model file")->required();
  dg->add_option("--data", dg_data, "Instances file")->required();
  dg->add_option("--sample", dcfg.sample_size, "Instances to sample");
  dg->add_option("--nucleus-p", dcfg.nucleus_p, "Nucleus mass");
  dg->add_option("--nucleus-steps", dcfg.nucleus_steps, "Sampled steps before greedy");
  dg->add_option("--seed", dcfg.seed, "Random seed");
  dg->add_option("--out", dg_out, "Report file");

  // verify
  auto* vf = app.add_subcommand("verify", "Run randomized property suites");
  std::string suite = "all";
  std::uint64_t vseed = 0;
  vf->add_option("--suite", suite, "gradients|lemma|decomposition|shift|assignment|all")
      ->check(CLI::IsMember({"gradients", "lemma", "decomposition", "shift", "assignment", "all"}));
  vf->add_option("--seed", vseed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }

  try {
    if (gen->parsed()) {
      const auto d = generate_synthetic(gcfg);
      std::filesystem::create_directories(gen_out);
      const std::filesystem::path dir(gen_out);
      write_instances((dir / "instances.jsonl").string(), d.train.instances);
      write_bundles((dir / "bundles.jsonl").string(), d.train.bundles);
      write_instances((dir / "dev_instances.jsonl").string(), d.dev.instances);
      write_bundles((dir / "dev_bundles.jsonl").string(), d.dev.bundles);
      out << "wrote " << d.train.bundles.size() << " train and " << d.dev.bundles.size()
          << " dev bundles to " << gen_out << "\n";
    } else if (mine->parsed()) {
      const auto bs = mine_corpus(read_instances(mine_in), mcfg);
      write_bundles(mine_out, bs);
      out << "mined " << bs.size() << " bundles\n";
    } else if (aug->parsed()) {
      const auto bs = augment_instances(read_instances(aug_in), detail::tables_or_default(aug_tables));
      write_bundles(aug_out, bs);
      out << "generated " << bs.size() << " bundles\n";
    } else if (neg->parsed()) {
      const auto m = load_model(neg_model);
      const auto r = topk_bundles(m.params, m.vocab, read_instances(neg_in), scfg);
      write_bundles(neg_out, r.bundles);
      out << "sampled " << r.bundles.size() << " bundles\n";
      for (const auto& id : r.skipped_ids) err << "no negative for " << id << "\n";
    } else if (tr->parsed()) {
      Dims dims;
      detail::apply_train_config(ta, *tr, dims);
      if (ta.data.empty()) throw ArgumentError("train needs --data");
      if (ta.out.empty()) throw ArgumentError("train needs --out");
      TrainConfig cfg;
      cfg.loss.variant = loss_variant_from_string(ta.loss);
      cfg.loss.compat = compat_mode_from_string(ta.compat);
      cfg.loss.alpha1 = ta.alpha1;
      cfg.loss.alpha2 = ta.alpha2;
      cfg.loss.lambda1 = ta.lambda1;
      cfg.loss.lambda2 = ta.lambda2;
      cfg.loss.ul_per_token = ta.ul_per_token;
      cfg.learning_rate = ta.lr;
      cfg.epochs = ta.epochs;
      cfg.seed = ta.seed;
      cfg.dims = dims;
      cfg.validate();

      const auto data = detail::load_dataset(ta.data, ta.bundles);
      std::optional<ScorerParams> init;
      Vocab vocab;
      if (!ta.init_model.empty()) {
        auto m = load_model(ta.init_model);
        vocab = m.vocab;
        init = std::move(m.params);
        cfg.dims = init->dims;
      } else {
        vocab = build_vocab(data.instances, data.bundles);
      }
      EpochEvaluator dev_eval;
      Dataset dev;
      if (!ta.dev_data.empty() || !ta.dev_bundles.empty()) {
        dev = detail::load_dataset(ta.dev_data, ta.dev_bundles);
        dev_eval = [&](const ScorerParams& p) {
          return evaluate(p, vocab, dev, {EvalMode::independent, cfg.loss.compat, std::nullopt});
        };
      }
      auto res = train(cfg, data, vocab, std::move(init), dev_eval);
      save_model(ta.out, {vocab, res.params});
      detail::write_json(ta.out + ".history.json", to_json(res.history));
      const auto& last = res.history.epochs.back();
      out << "trained " << res.history.epochs.size() << " epochs, final objective "
          << last.objective << ", skipped " << last.skipped << "\n";
    } else if (ev->parsed()) {
      const auto m = load_model(ev_model);
      const auto data = detail::load_dataset(ev_data, ev_bundles);
      EvalOptions opt{eval_mode_from_string(ev_mode), compat_mode_from_string(ev_compat),
                      std::nullopt};
      if (ev_augment) opt.augment_at_test = detail::tables_or_default(ev_tables);
      std::vector<Prediction> preds;
      auto rep = evaluate(m.params, m.vocab, data, opt, &preds);
      if (ev_diag > 0) {
        DiagnoseConfig dc;
        dc.sample_size = ev_diag;
        dc.seed = ev_seed;
        auto insts = data.instances;
        if (insts.empty()) insts = flatten_bundles(data.bundles);
        const auto d = diagnose(m.params, m.vocab, insts, dc);
        rep.entropy10_mean = d.entropy10_mean;
        rep.top2_ratio_mean = d.top2_ratio_mean;
        rep.n_diagnosed = d.ids.size();
      }
      const json j = to_json(rep);
      if (!ev_out.empty()) detail::write_json(ev_out, j);
      if (!ev_preds.empty()) detail::write_file(ev_preds, to_jsonl(preds));
      out << j.dump(2) << "\n";
    } else if (dg->parsed()) {
      const auto m = load_model(dg_model);
      const auto d = diagnose(m.params, m.vocab, read_instances(dg_data), dcfg);
      const json j = to_json(d);
      if (!dg_out.empty()) detail::write_json(dg_out, j);
      out << "entropy10_mean " << d.entropy10_mean << " top2_ratio_mean " << d.top2_ratio_mean
          << " over " << d.ids.size() << " instances\n";
    } else if (vf->parsed()) {
      std::vector<SuiteResult> results;
      auto want = [&](const char* s) { return suite == "all" || suite == s; };
      if (want("gradients")) results.push_back(verify_gradients(vseed));
      if (want("lemma")) results.push_back(verify_lemma(vseed));
      if (want("decomposition")) results.push_back(verify_decomposition(vseed));
      if (want("shift")) results.push_back(verify_shift(vseed));
      if (want("assignment")) results.push_back(verify_assignment(vseed));
      bool ok = true;
      for (const auto& r : results) {
        out << describe(r) << "\n";
        ok = ok && r.passed;
      }
      return ok ? 0 : 2;
    }
  } catch (const TrainingAborted& e) {
    err << "training aborted: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {  // ConfigError, ArgumentError
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::out_of_range& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::domain_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::length_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace cebundle

#include "hse/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hse/config.hpp"
#include "hse/data.hpp"
#include "hse/errors.hpp"
#include "hse/gradsuite.hpp"
#include "hse/metrics.hpp"
#include "hse/model.hpp"
#include "hse/train.hpp"

namespace fs = std::filesystem;

namespace hse {

namespace {

KeyValueConfig gather_config(const std::string& config_path,
                             const std::vector<std::string>& overrides, const std::string& mode) {
  KeyValueConfig kv =
      config_path.empty() ? KeyValueConfig::empty() : KeyValueConfig::load(config_path);
  if (mode == "baseline") {
    kv.set("enable_serl", "false");
    kv.set("enable_sglr", "false");
  } else if (mode == "no-serl") {
    kv.set("enable_serl", "false");
    kv.set("enable_sglr", "true");
  } else if (mode == "no-sglr") {
    kv.set("enable_serl", "true");
    kv.set("enable_sglr", "false");
  } else if (mode == "full") {
    kv.set("enable_serl", "true");
    kv.set("enable_sglr", "true");
  }  // "backtrack" and "" leave the model flags to the config file
  for (const std::string& ov : overrides) {
    size_t eq = ov.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got: " + ov);
    kv.set(ov.substr(0, eq), ov.substr(eq + 1));
  }
  kv.check_known_keys();
  return kv;
}

Taxonomy load_dataset_taxonomy(const std::string& data_dir) {
  return Taxonomy::load((fs::path(data_dir) / "taxonomy.tsv").string());
}

Dataset load_split(const Taxonomy& taxonomy, const std::string& data_dir,
                   const std::string& split) {
  return load_manifest(taxonomy, (fs::path(data_dir) / (split + ".tsv")).string(), data_dir);
}

int run_gen_data(const std::string& out_dir, const KeyValueConfig& kv) {
  SyntheticSpec spec = synthetic_spec_from(kv);
  Taxonomy taxonomy = generate_synthetic(spec, out_dir);
  std::cout << "wrote dataset to " << out_dir << " (levels:";
  for (int s : taxonomy.level_sizes()) std::cout << " " << s;
  std::cout << ", " << spec.train_per_leaf << "/" << spec.val_per_leaf << "/"
            << spec.test_per_leaf << " samples per leaf)\n";
  return 0;
}

int run_train(const std::string& data_dir, const std::string& out_dir, const KeyValueConfig& kv,
              int stage, const std::string& init_from) {
  Taxonomy taxonomy = load_dataset_taxonomy(data_dir);
  Dataset train = load_split(taxonomy, data_dir, "train");
  Dataset val = load_split(taxonomy, data_dir, "val");

  ModelConfig cfg = model_config_from(kv, taxonomy);
  AugmentConfig aug = augment_config_from(kv);
  uint64_t seed = kv.get_u64("seed", 1);
  HseModel model(cfg, seed, taxonomy);

  fs::create_directories(out_dir);
  std::vector<EpochRecord> log;

  if (stage == 2) {
    if (init_from.empty() || !fs::exists(init_from))
      throw DataError("stage 2 requires a stage-1 checkpoint (--init-from)");
    model.load(init_from);
  } else {
    StagePlan plan1 = stage_plan_from(kv, 1);
    train_stage1(model, taxonomy, train, val, plan1, aug, log);
    model.save((fs::path(out_dir) / "model_stage1.ntc1").string());
  }
  if (stage != 1) {
    StagePlan plan2 = stage_plan_from(kv, 2);
    train_stage2(model, taxonomy, train, val, plan2, aug, log);
  }

  model.save((fs::path(out_dir) / "model.ntc1").string());
  write_metrics_log((fs::path(out_dir) / "metrics.jsonl").string(), log);
  KeyValueConfig effective = kv;
  effective.set("seed", std::to_string(seed));
  effective.save((fs::path(out_dir) / "config.txt").string());

  if (!log.empty()) {
    const EpochRecord& last = log.back();
    std::cout << "final val accuracy:";
    for (double a : last.val_accuracy) std::cout << " " << a;
    std::cout << "\n";
  }
  std::cout << "wrote " << (fs::path(out_dir) / "model.ntc1").string() << "\n";
  return 0;
}

int run_eval(const std::string& data_dir, const std::string& checkpoint,
             const KeyValueConfig& kv, const std::string& split, const std::string& mode,
             const std::string& out_path) {
  Taxonomy taxonomy = load_dataset_taxonomy(data_dir);
  Dataset dataset = load_split(taxonomy, data_dir, split);
  ModelConfig cfg = model_config_from(kv, taxonomy);
  AugmentConfig aug = augment_config_from(kv);
  HseModel model(cfg, kv.get_u64("seed", 1), taxonomy);
  model.load(checkpoint);

  EvalResult result = evaluate_model(model, taxonomy, dataset, aug, kv.get_int("batch_size", 8),
                                     mode == "backtrack", mode.empty() ? "full" : mode);
  std::string json = result.report.to_json();
  std::cout << json << "\n";
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    if (!os) throw DataError("cannot write report: " + out_path);
    os << json << "\n";
  }
  return 0;
}

int run_analyze_errors(const std::string& data_dir, const std::string& checkpoint,
                       const KeyValueConfig& kv, const std::string& split,
                       const std::string& against_path, const std::string& out_path) {
  Taxonomy taxonomy = load_dataset_taxonomy(data_dir);
  Dataset dataset = load_split(taxonomy, data_dir, split);
  ModelConfig cfg = model_config_from(kv, taxonomy);
  AugmentConfig aug = augment_config_from(kv);
  HseModel model(cfg, kv.get_u64("seed", 1), taxonomy);
  model.load(checkpoint);

  EvalResult result = evaluate_model(model, taxonomy, dataset, aug, kv.get_int("batch_size", 8),
                                     /*backtrack=*/false, "analyze-errors");
  nlohmann::json j;
  j["sample_count"] = result.report.sample_count;
  j["levels"] = nlohmann::json::array();
  for (int lv = 1; lv < taxonomy.level_count(); ++lv) {
    nlohmann::json level;
    level["level"] = lv + 1;
    level["inter_superclass_errors"] = result.report.inter_errors[static_cast<size_t>(lv)];
    level["intra_superclass_errors"] = result.report.intra_errors[static_cast<size_t>(lv)];
    level["correct"] = result.report.sample_count -
                       result.report.inter_errors[static_cast<size_t>(lv)] -
                       result.report.intra_errors[static_cast<size_t>(lv)];
    j["levels"].push_back(level);
  }

  // Relative inter-superclass reduction against a previously written report.
  if (!against_path.empty()) {
    std::ifstream is(against_path);
    if (!is) throw DataError("cannot open reference report: " + against_path);
    nlohmann::json ref = nlohmann::json::parse(is, nullptr, /*allow_exceptions=*/false);
    if (ref.is_discarded()) throw DataError("malformed reference report: " + against_path);
    const auto& ref_levels = ref.at("levels");
    for (auto& level : j["levels"]) {
      int lv = level.at("level").get<int>();
      for (const auto& rl : ref_levels) {
        if (rl.at("level").get<int>() != lv || !rl.contains("inter_superclass_errors")) continue;
        int64_t ref_inter = rl.at("inter_superclass_errors").get<int64_t>();
        int64_t got_inter = level.at("inter_superclass_errors").get<int64_t>();
        if (ref_inter > 0)
          level["inter_relative_reduction_pct"] =
              100.0 * static_cast<double>(ref_inter - got_inter) / static_cast<double>(ref_inter);
      }
    }
  }

  std::string text = j.dump(2);
  std::cout << text << "\n";
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    if (!os) throw DataError("cannot write report: " + out_path);
    os << text << "\n";
  }
  return 0;
}

int run_export_attention(const std::string& data_dir, const std::string& checkpoint,
                         const KeyValueConfig& kv, const std::string& split, int sample,
                         int level, const std::string& out_path) {
  Taxonomy taxonomy = load_dataset_taxonomy(data_dir);
  Dataset dataset = load_split(taxonomy, data_dir, split);
  if (sample < 0 || sample >= dataset.size())
    throw DataError("sample index " + std::to_string(sample) + " out of range [0," +
                    std::to_string(dataset.size()) + ")");
  ModelConfig cfg = model_config_from(kv, taxonomy);
  AugmentConfig aug = augment_config_from(kv);
  HseModel model(cfg, kv.get_u64("seed", 1), taxonomy);
  model.load(checkpoint);
  export_attention(model, taxonomy, dataset.samples[static_cast<size_t>(sample)].image,
                   level - 1, aug, out_path);
  std::cout << "wrote " << out_path << " and " << out_path << ".txt\n";
  return 0;
}

int run_inspect_taxonomy(const std::string& path) {
  Taxonomy taxonomy = Taxonomy::load(path);
  std::vector<int> sizes = taxonomy.level_sizes();
  for (size_t i = 0; i < sizes.size(); ++i) std::cout << (i ? " " : "") << sizes[i];
  std::cout << "\n";
  std::vector<std::string> violations = taxonomy.validate();
  if (!violations.empty()) {
    for (const std::string& v : violations) std::cerr << "violation: " << v << "\n";
    throw DataError("taxonomy failed validation with " + std::to_string(violations.size()) +
                    " violation(s)");
  }
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Hierarchical semantic embedding engine"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, checkpoint, split = "test", mode, out_path;
  std::string init_from, taxonomy_path, against_path;
  std::vector<std::string> overrides;
  int stage = 0, sample = 0, level = 2;

  auto add_common = [&](CLI::App* cmd, bool with_mode) {
    cmd->add_option("--config", config_path, "key=value config file");
    cmd->add_option("--set", overrides, "override a config key (key=value)")->take_all();
    if (with_mode)
      cmd->add_option("--mode", mode,
                      "variant: full, baseline, backtrack, no-serl, no-sglr")
          ->check(CLI::IsMember({"full", "baseline", "backtrack", "no-serl", "no-sglr"}));
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic hierarchical dataset");
  gen->add_option("--out", out_dir, "output dataset directory")->required();
  add_common(gen, false);

  CLI::App* train = app.add_subcommand("train", "run the two-stage trainer");
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--stage", stage, "train only one stage (1 or 2; default both)")
      ->check(CLI::Range(1, 2));
  train->add_option("--init-from", init_from, "stage-1 checkpoint for --stage 2");
  add_common(train, true);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--checkpoint", checkpoint, "NTC1 checkpoint")->required();
  eval->add_option("--split", split, "manifest split name (default test)");
  eval->add_option("--out", out_path, "write the JSON report here");
  add_common(eval, true);

  CLI::App* analyze = app.add_subcommand("analyze-errors",
                                         "inter/intra-superclass error decomposition");
  analyze->add_option("--data", data_dir, "dataset directory")->required();
  analyze->add_option("--checkpoint", checkpoint, "NTC1 checkpoint")->required();
  analyze->add_option("--split", split, "manifest split name (default test)");
  analyze->add_option("--against", against_path,
                      "previous analyze-errors report for relative reductions");
  analyze->add_option("--out", out_path, "write the JSON report here");
  add_common(analyze, false);

  CLI::App* attention = app.add_subcommand("export-attention", "write an attention heatmap");
  attention->add_option("--data", data_dir, "dataset directory")->required();
  attention->add_option("--checkpoint", checkpoint, "NTC1 checkpoint")->required();
  attention->add_option("--split", split, "manifest split name (default test)");
  attention->add_option("--sample", sample, "sample index within the split")->required();
  attention->add_option("--level", level, "1-based hierarchy level (>= 2)");
  attention->add_option("--out", out_path, "output PGM path")->required();
  add_common(attention, false);

  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "run the full gradient verification suite");
  (void)gradcheck_cmd;

  CLI::App* inspect = app.add_subcommand("inspect-taxonomy", "print level sizes and validate");
  inspect->add_option("file", taxonomy_path, "taxonomy TSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) return run_gen_data(out_dir, gather_config(config_path, overrides, ""));
    if (train->parsed())
      return run_train(data_dir, out_dir, gather_config(config_path, overrides, mode), stage,
                       init_from);
    if (eval->parsed())
      return run_eval(data_dir, checkpoint, gather_config(config_path, overrides, mode), split,
                      mode, out_path);
    if (analyze->parsed())
      return run_analyze_errors(data_dir, checkpoint, gather_config(config_path, overrides, ""),
                                split, against_path, out_path);
    if (attention->parsed())
      return run_export_attention(data_dir, checkpoint,
                                  gather_config(config_path, overrides, ""), split, sample, level,
                                  out_path);
    if (gradcheck_cmd->parsed()) {
      GradSuiteResult result = run_gradient_suite(std::cout);
      std::cout << "gradient suite: " << result.passed << "/" << result.total
                << " checks passed, max_rel_err=" << result.max_rel_err << "\n";
      return result.pass() ? 0 : 3;
    }
    if (inspect->parsed()) return run_inspect_taxonomy(taxonomy_path);
    throw UsageError("no subcommand given");
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace hse

// Command-line front end over the C API.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "meir/meir.h"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct Failure {
  meir_status status;
};

void check(meir_status s) {
  if (s != MEIR_OK) throw Failure{s};
}

struct ConfigDeleter {
  void operator()(meir_config* c) const { meir_config_destroy(c); }
};
struct ModelDeleter {
  void operator()(meir_model* m) const { meir_model_destroy(m); }
};
struct TextDeleter {
  void operator()(meir_text* t) const { meir_text_destroy(t); }
};
using ConfigPtr = std::unique_ptr<meir_config, ConfigDeleter>;
using ModelPtr = std::unique_ptr<meir_model, ModelDeleter>;
using TextPtr = std::unique_ptr<meir_text, TextDeleter>;

// Config file first, then each `--set key=value` in order.
ConfigPtr load_config(const std::string& path, const std::vector<std::string>& overrides) {
  meir_config* raw = nullptr;
  check(path.empty() ? meir_config_create(&raw) : meir_config_load(path.c_str(), &raw));
  ConfigPtr cfg(raw);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value, got '" + kv + "'");
    check(meir_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
  }
  return cfg;
}

ModelPtr load_model(const std::string& path) {
  meir_model* raw = nullptr;
  check(meir_model_load(path.c_str(), &raw));
  return ModelPtr(raw);
}

// Report to stdout, or atomically to `out` when given.
void emit(meir_text* raw, const std::string& out) {
  TextPtr text(raw);
  const std::string_view data(meir_text_data(text.get()), meir_text_size(text.get()));
  if (out.empty()) {
    std::cout << data << std::flush;
    return;
  }
  const std::filesystem::path target(out);
  const std::filesystem::path tmp(out + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary);
    f << data;
    if (!f) {
      std::cerr << "meir: error: cannot write " << tmp.string() << "\n";
      throw Failure{MEIR_ERR_IO};
    }
  }
  std::filesystem::rename(tmp, target);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal entity image repurposing detection toolkit"};
  app.set_version_flag("--version", std::string("meir ") + meir_version());
  app.require_subcommand(1);

  std::string config_path, data_dir, out, ckpt, query, index, missing, report;
  std::string modalities = "image,text,gps";
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  std::size_t k = 10, L = 64, trials = 30;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus directory");
  synth->add_option("--config", config_path, "Config file (key = value lines)");
  synth->add_option("--seed", seed, "Run seed")->required();
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--set", overrides, "Override a config key: key=value");

  auto* train = app.add_subcommand("train", "Train a model on a corpus directory");
  train->add_option("--data", data_dir, "Corpus directory")->required();
  train->add_option("--config", config_path, "Config file (key = value lines)");
  train->add_option("--seed", seed, "Run seed")->required();
  train->add_option("--out", out, "Checkpoint path")->required();
  train->add_option("--set", overrides, "Override a config key: key=value");

  auto* predict = app.add_subcommand("predict", "Score query packages with a checkpoint");
  predict->add_option("--ckpt", ckpt, "Checkpoint")->required();
  predict->add_option("--query", query, "Query corpus file (jsonl)")->required();
  predict->add_option("--index", index, "Reference corpus file (jsonl)");
  predict->add_option("--report", report, "Write the output here instead of stdout");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus test split");
  eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
  eval->add_option("--data", data_dir, "Corpus directory")->required();
  eval->add_option("--missing", missing, "Zero this modality in retrieved packages")
      ->check(CLI::IsMember({"image", "text", "gps"}));
  eval->add_option("--report", report, "Write the report here instead of stdout");

  auto* retrieve = app.add_subcommand("retrieve", "Rank reference packages for each query");
  retrieve->add_option("--query", query, "Query corpus file (jsonl)")->required();
  retrieve->add_option("--index", index, "Reference corpus file (jsonl)")->required();
  retrieve->add_option("--modalities", modalities, "Comma-separated subset of image,text,gps");
  retrieve->add_option("--k", k, "Results per query")->check(CLI::PositiveNumber);
  retrieve->add_option("--config", config_path, "Config file (gps_sim)");
  retrieve->add_option("--set", overrides, "Override a config key: key=value");
  retrieve->add_option("--report", report, "Write the output here instead of stdout");

  auto* importance = app.add_subcommand("importance", "Per-modality random forest importance");
  importance->add_option("--data", data_dir, "Corpus directory")->required();
  importance->add_option("--L", L, "Projected dimension per modality")->check(CLI::PositiveNumber);
  importance->add_option("--trials", trials, "Number of trials")->check(CLI::PositiveNumber);
  importance->add_option("--seed", seed, "Run seed");
  importance->add_option("--report", report, "Write the report here instead of stdout");

  auto* baseline = app.add_subcommand("baseline", "Baseline integrity scorers");
  baseline->require_subcommand(1);
  auto* srs = baseline->add_subcommand("srs", "Cross-modal retrieval agreement baseline");
  srs->add_option("--data", data_dir, "Corpus directory")->required();
  srs->add_option("--k", k, "Retrieved set size per modality")->check(CLI::PositiveNumber);
  srs->add_option("--report", report, "Write the report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    meir_text* text = nullptr;
    if (synth->parsed()) {
      const auto cfg = load_config(config_path, overrides);
      check(meir_synth(cfg.get(), seed, out.c_str()));
    } else if (train->parsed()) {
      const auto cfg = load_config(config_path, overrides);
      check(meir_train(data_dir.c_str(), cfg.get(), seed, out.c_str(), &text));
      emit(text, "");
    } else if (predict->parsed()) {
      const auto model = load_model(ckpt);
      check(meir_predict(model.get(), query.c_str(), index.empty() ? nullptr : index.c_str(), &text));
      emit(text, report);
    } else if (eval->parsed()) {
      const auto model = load_model(ckpt);
      check(meir_eval(model.get(), data_dir.c_str(), missing.empty() ? nullptr : missing.c_str(), &text));
      emit(text, report);
    } else if (retrieve->parsed()) {
      const auto cfg = load_config(config_path, overrides);
      check(meir_retrieve(query.c_str(), index.c_str(), modalities.c_str(), k, cfg.get(), &text));
      emit(text, report);
    } else if (importance->parsed()) {
      check(meir_importance(data_dir.c_str(), L, trials, seed, &text));
      emit(text, report);
    } else if (srs->parsed()) {
      check(meir_baseline_srs(data_dir.c_str(), k, &text));
      emit(text, report);
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "meir: usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Failure& f) {
    if (*meir_last_error() != '\0') {
      std::cerr << "meir: " << meir_status_name(f.status) << ": " << meir_last_error() << "\n";
    }
    return f.status == MEIR_ERR_USAGE || f.status == MEIR_ERR_INVALID_ARGUMENT ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "meir: error: " << e.what() << "\n";
    return kExitFailure;
  }
  return 0;
}

#include "meir/meir.h"

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include "meir/analysis.hpp"
#include "meir/config.hpp"
#include "meir/dataset.hpp"
#include "meir/error.hpp"
#include "meir/model.hpp"
#include "meir/synth.hpp"

struct meir_config {
  meir::Config cfg;
};

struct meir_text {
  std::string data;
};

struct meir_model {
  meir::Checkpoint ckpt;
  meir::EmbeddingConfig embed;
  meir::GpsSimilarity gps_sim = meir::GpsSimilarity::cosine;
};

namespace {

using namespace meir;
namespace fs = std::filesystem;

thread_local std::string last_error;

meir_status status_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::validation: return MEIR_ERR_VALIDATION;
    case ErrorCode::format: return MEIR_ERR_FORMAT;
    case ErrorCode::not_found: return MEIR_ERR_NOT_FOUND;
    case ErrorCode::io: return MEIR_ERR_IO;
    case ErrorCode::empty_index: return MEIR_ERR_EMPTY_INDEX;
    case ErrorCode::diverged: return MEIR_ERR_DIVERGED;
    case ErrorCode::invalid_argument: return MEIR_ERR_INVALID_ARGUMENT;
    case ErrorCode::usage: return MEIR_ERR_USAGE;
  }
  return MEIR_ERR_INTERNAL;
}

template <typename F>
meir_status guarded(F&& body) {
  try {
    body();
    last_error.clear();
    return MEIR_OK;
  } catch (const Error& e) {
    last_error = e.what();
    return status_of(e.code());
  } catch (const fs::filesystem_error& e) {
    last_error = e.what();
    return MEIR_ERR_IO;
  } catch (const std::exception& e) {
    last_error = std::string("internal error: ") + e.what();
    return MEIR_ERR_INTERNAL;
  } catch (...) {
    last_error = "internal error";
    return MEIR_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) fail(ErrorCode::invalid_argument, std::string(what) + " must not be null");
}

const Config& config_or_default(const meir_config* c) {
  static const Config empty;
  return c ? c->cfg : empty;
}

meir_text* make_text(std::string s) { return new meir_text{std::move(s)}; }

/// Exclusive lock file held for the lifetime of one writing run.
class RunLock {
 public:
  explicit RunLock(fs::path path) : path_(std::move(path)) {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) {
      if (fs::exists(path_)) {
        fail(ErrorCode::io, "another run holds " + path_.string() + "; remove it if that run died");
      }
      fail(ErrorCode::io, "cannot create lock file " + path_.string());
    }
    std::fclose(f);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  fs::path path_;
};

void ensure_parent(const fs::path& file) {
  const auto dir = file.parent_path();
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create " + dir.string() + ": " + ec.message());
}

EmbeddingConfig embedding_from_extra(const std::map<std::string, std::string>& extra) {
  return embedding_config_from(extra);
}

std::vector<Example> query_pool(const Dataset& d) {
  std::vector<Example> q = d.train;
  q.insert(q.end(), d.val.begin(), d.val.end());
  q.insert(q.end(), d.test.begin(), d.test.end());
  return q;
}

// A bad modality list is the caller's argument, not a malformed file.
std::vector<Modality> argument_modalities(const char* csv) {
  try {
    return parse_modalities(csv);
  } catch (const Error& e) {
    fail(ErrorCode::invalid_argument, e.what());
  }
}

std::string metric_line(const std::string& name, double v) { return name + "\t" + format_double(v) + "\n"; }
std::string metric_line(const std::string& name, std::size_t v) { return name + "\t" + std::to_string(v) + "\n"; }

}  // namespace

extern "C" {

const char* meir_version(void) { return "0.1.0"; }

const char* meir_status_name(meir_status status) {
  switch (status) {
    case MEIR_OK: return "ok";
    case MEIR_ERR_VALIDATION: return "validation error";
    case MEIR_ERR_FORMAT: return "format error";
    case MEIR_ERR_NOT_FOUND: return "not found";
    case MEIR_ERR_IO: return "i/o error";
    case MEIR_ERR_EMPTY_INDEX: return "empty index";
    case MEIR_ERR_DIVERGED: return "training diverged";
    case MEIR_ERR_INVALID_ARGUMENT: return "invalid argument";
    case MEIR_ERR_USAGE: return "usage error";
    case MEIR_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* meir_last_error(void) { return last_error.c_str(); }

meir_status meir_config_create(meir_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new meir_config{};
  });
}

meir_status meir_config_load(const char* path, meir_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new meir_config{Config::load(path)};
  });
}

meir_status meir_config_set(meir_config* config, const char* key, const char* value) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    require(value, "value");
    if (*key == '\0') fail(ErrorCode::invalid_argument, "config key must not be empty");
    config->cfg.set(key, value);
  });
}

meir_status meir_config_dump(const meir_config* config, meir_text** out) {
  return guarded([&] {
    require(out, "out");
    *out = make_text(config_or_default(config).dump());
  });
}

void meir_config_destroy(meir_config* config) { delete config; }

const char* meir_text_data(const meir_text* text) { return text ? text->data.c_str() : ""; }
size_t meir_text_size(const meir_text* text) { return text ? text->data.size() : 0; }
void meir_text_destroy(meir_text* text) { delete text; }

meir_status meir_synth(const meir_config* config, uint64_t seed, const char* out_dir) {
  return guarded([&] {
    require(out_dir, "out_dir");
    const Config& cfg = config_or_default(config);
    const SynthConfig sc = SynthConfig::from(cfg);
    const SyntheticCorpus corpus = generate_synthetic_corpus(sc, default_lexicons(sc.clusters, seed), seed);
    BuiltDataset built = build_dataset(corpus, sc, seed);

    // Unused keys are kept too, so the manifest reproduces the whole run.
    std::map<std::string, std::string> snapshot = cfg.values();
    for (const auto& [k, v] : sc.snapshot()) snapshot[k] = v;
    built.manifest.config = std::move(snapshot);

    const fs::path dir(out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorCode::io, "cannot create " + dir.string() + ": " + ec.message());
    RunLock lock(dir / ".lock");
    write_dataset(dir, built, sc.image_dim);
  });
}

meir_status meir_train(const char* data_dir, const meir_config* config, uint64_t seed,
                       const char* ckpt_path, meir_text** log_out) {
  return guarded([&] {
    require(data_dir, "data_dir");
    require(ckpt_path, "ckpt_path");
    const Config& cfg = config_or_default(config);
    const Dataset d = load_dataset(data_dir);

    ModelConfig mc = ModelConfig::from(cfg, d.embed);
    if (mc.image_dim != d.embed.image_dim || mc.text_dim != d.embed.text_dim) {
      fail(ErrorCode::invalid_argument, "configured image_dim/text_dim differ from the dataset's");
    }
    mc.seed = seed;
    const GpsSimilarity gps_sim = parse_gps_similarity(cfg.get_string("gps_sim", "cosine"));
    const ReferenceSet refs = build_reference_set(d.reference, gps_sim);
    const TrainResult result = train(d.train, d.val, refs, mc);

    Checkpoint ckpt{mc, result.params, {}};
    ckpt.extra = {
        {"data_dir", std::string(data_dir)},
        {"seed", std::to_string(seed)},
        {"best_epoch", std::to_string(result.best_epoch)},
        {"best_val_auc", format_double(result.best_val_auc)},
        {"gps_sim", std::string(to_string(gps_sim))},
        {"text_dim", std::to_string(d.embed.text_dim)},
        {"image_dim", std::to_string(d.embed.image_dim)},
        {"embed_seed", std::to_string(d.embed.seed)},
    };
    const fs::path path(ckpt_path);
    ensure_parent(path);
    RunLock lock(fs::path(path.string() + ".lock"));
    const std::string log = result.log_text();
    save_checkpoint(path, ckpt);
    write_file_atomic(fs::path(path.string() + ".log"), log);
    if (log_out) *log_out = make_text(log);
  });
}

meir_status meir_model_load(const char* ckpt_path, meir_model** out) {
  return guarded([&] {
    require(ckpt_path, "ckpt_path");
    require(out, "out");
    auto model = std::make_unique<meir_model>();
    model->ckpt = load_checkpoint(ckpt_path);
    model->embed = embedding_from_extra(model->ckpt.extra);
    const auto it = model->ckpt.extra.find("gps_sim");
    if (it != model->ckpt.extra.end()) model->gps_sim = parse_gps_similarity(it->second);
    *out = model.release();
  });
}

void meir_model_destroy(meir_model* model) { delete model; }

meir_status meir_predict(const meir_model* model, const char* query_file, const char* index_file,
                         meir_text** out) {
  return guarded([&] {
    require(model, "model");
    require(query_file, "query_file");
    require(out, "out");
    const ModelConfig& mc = model->ckpt.config;
    const auto queries = load_examples(query_file, model->embed);
    std::vector<Example> reference;
    if (mc.related_branch) {
      require(index_file, "index_file");
      reference = load_examples(index_file, model->embed);
    }
    const ReferenceSet refs = build_reference_set(reference, model->gps_sim);
    std::string text;
    for (const auto& q : queries) {
      const ModelOutput o = predict(q, refs, model->ckpt.params, mc);
      text += q.id + "\t" + format_double(o.integrity_prob) + "\t" + format_double(o.relationship_prob) + "\t" +
              format_double(o.manipulation_probs[0]) + "," + format_double(o.manipulation_probs[1]) + "," +
              format_double(o.manipulation_probs[2]) + "\t" + (o.retrieved_id.empty() ? "-" : o.retrieved_id) +
              "\n";
    }
    *out = make_text(std::move(text));
  });
}

meir_status meir_eval(const meir_model* model, const char* data_dir, const char* missing, meir_text** out) {
  return guarded([&] {
    require(model, "model");
    require(data_dir, "data_dir");
    require(out, "out");
    std::optional<Modality> drop;
    if (missing && *missing) drop = argument_modalities(missing).front();
    const Dataset d = load_dataset(data_dir);
    const ModelConfig& mc = model->ckpt.config;
    if (d.embed.image_dim != mc.image_dim || d.embed.text_dim != mc.text_dim) {
      fail(ErrorCode::invalid_argument, "dataset feature dims differ from the checkpoint's");
    }
    const ReferenceSet refs = build_reference_set(d.reference, model->gps_sim);
    const Scorer scorer = [&](const Example& q, const FeatureBundle& retrieved, const std::string&) {
      return forward(model->ckpt.params, mc, q.bundle, mc.related_branch ? &retrieved : nullptr).integrity_prob;
    };
    *out = make_text(evaluate_run(scorer, d.test, refs, drop).to_text());
  });
}

meir_status meir_retrieve(const char* query_file, const char* index_file, const char* modalities, size_t k,
                          const meir_config* config, meir_text** out) {
  return guarded([&] {
    require(query_file, "query_file");
    require(index_file, "index_file");
    require(out, "out");
    if (k == 0) fail(ErrorCode::invalid_argument, "k must be >= 1");
    const auto mods = argument_modalities(modalities ? modalities : "image,text,gps");
    const Config& cfg = config_or_default(config);
    const EmbeddingConfig embed = embedding_config_near(index_file);
    const auto queries = load_examples(query_file, embed);
    const auto reference = load_examples(index_file, embed);
    const ReferenceSet refs =
        build_reference_set(reference, parse_gps_similarity(cfg.get_string("gps_sim", "cosine")));
    std::string text;
    for (const auto& q : queries) {
      const auto result = retrieve_top_k(q.bundle, *refs.index, mods, k);
      for (std::size_t r = 0; r < result.hits.size(); ++r) {
        text += q.id + "\t" + std::to_string(r + 1) + "\t" + result.hits[r].id + "\t" +
                format_double(result.hits[r].score) + "\n";
      }
    }
    *out = make_text(std::move(text));
  });
}

meir_status meir_importance(const char* data_dir, size_t L, size_t trials, uint64_t seed, meir_text** out) {
  return guarded([&] {
    require(data_dir, "data_dir");
    require(out, "out");
    if (L == 0 || trials == 0) fail(ErrorCode::invalid_argument, "L and trials must be >= 1");
    const Dataset d = load_dataset(data_dir);
    const ReferenceSet refs = build_reference_set(d.reference);
    if (refs.index->empty()) fail(ErrorCode::empty_index, "reference index is empty");
    const auto queries = query_pool(d);
    std::vector<PairedSample> samples;
    samples.reserve(queries.size());
    for (const auto& q : queries) {
      const auto top = retrieve_top_k(q.bundle, *refs.index, kAllModalities, 1);
      samples.push_back({&q.bundle, &refs.index->bundle(top.top_id()), q.tampered() ? 1 : 0});
    }
    const ImportanceReport rep = modality_importance(samples, L, trials, seed);
    std::string text = metric_line("L", rep.L) + metric_line("trials", rep.trials);
    for (const Modality m : kAllModalities) {
      const std::string name(to_string(m));
      const auto i = static_cast<std::size_t>(m);
      text += metric_line("importance_" + name, rep.modality(m));
      text += metric_line("importance_query_" + name, rep.query[i]);
      text += metric_line("importance_retrieved_" + name, rep.retrieved[i]);
      text += metric_line("wins_" + name, rep.wins(m));
    }
    *out = make_text(std::move(text));
  });
}

meir_status meir_baseline_srs(const char* data_dir, size_t k, meir_text** out) {
  return guarded([&] {
    require(data_dir, "data_dir");
    require(out, "out");
    if (k == 0) fail(ErrorCode::invalid_argument, "k must be >= 1");
    const Dataset d = load_dataset(data_dir);
    const ReferenceSet refs = build_reference_set(d.reference);
    if (refs.index->empty()) fail(ErrorCode::empty_index, "reference index is empty");
    // High agreement between modalities means clean, so the tamper score is 1 - SRS.
    const Scorer scorer = [&](const Example& q, const FeatureBundle&, const std::string&) {
      return 1.0 - srs_score(q.bundle, *refs.index, k);
    };
    *out = make_text(metric_line("srs_k", static_cast<std::size_t>(k)) +
                     evaluate_run(scorer, d.test, refs, std::nullopt).to_text());
  });
}

}  // extern "C"

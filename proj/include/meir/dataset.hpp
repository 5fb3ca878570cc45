#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "meir/core.hpp"
#include "meir/embed.hpp"
#include "meir/retrieval.hpp"
#include "meir/synth.hpp"

namespace meir {

/// A package reduced to what training and evaluation consume.
struct Example {
  std::string id;
  FeatureBundle bundle;
  std::int64_t cluster = -1;  // -1 when the corpus carries no ground truth
  IntegrityLabel integrity = IntegrityLabel::clean;
  ManipulationType manipulation = ManipulationType::none;

  bool tampered() const { return integrity == IntegrityLabel::manipulated; }
};

/// Reads the embedding settings recorded in a manifest config snapshot.
EmbeddingConfig embedding_config_from(const std::map<std::string, std::string>& snapshot);

std::vector<Example> make_examples(const std::vector<Package>& packages, const TextEmbedder& text,
                                   const ImageFeatureSource& image);

/// Examples from one corpus file; image features resolve relative to its directory.
std::vector<Example> load_examples(const std::filesystem::path& corpus_file,
                                   const EmbeddingConfig& embed);

/// A corpus directory as written by the synth stage.
struct Dataset {
  std::filesystem::path dir;
  DatasetManifest manifest;
  EmbeddingConfig embed;
  std::vector<Example> reference;
  std::vector<Example> train;
  std::vector<Example> val;
  std::vector<Example> test;
};

Dataset load_dataset(const std::filesystem::path& dir);

/// The same splits load_dataset would read back after write_dataset, built
/// in memory.
Dataset dataset_from(const BuiltDataset& data, const EmbeddingConfig& embed);

/// Settings for a directory without a manifest fall back to `fallback`.
EmbeddingConfig embedding_config_near(const std::filesystem::path& corpus_file,
                                      const EmbeddingConfig& fallback = {});

/// Retrieval index over the reference examples plus their cluster lookup.
struct ReferenceSet {
  std::shared_ptr<const ReferenceIndex> index;
  std::unordered_map<std::string, std::int64_t> cluster_of;
  std::vector<const Example*> rows;  // parallel to index rows
};

ReferenceSet build_reference_set(const std::vector<Example>& reference,
                                 GpsSimilarity gps_sim = GpsSimilarity::cosine);

}  // namespace meir

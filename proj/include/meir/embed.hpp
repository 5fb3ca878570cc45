#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "meir/core.hpp"

namespace meir {

enum class ProviderKind { hash_tokens, precomputed_file };

struct EmbeddingConfig {
  ProviderKind kind = ProviderKind::hash_tokens;
  std::size_t text_dim = 32;
  std::size_t image_dim = 64;
  std::uint64_t seed = 0;
};

/// Text side of the provider contract: one vector per token.
class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual std::size_t dim() const = 0;
  virtual Vector embed(std::string_view token) const = 0;
};

/// Image side of the provider contract: one vector per package.
class ImageFeatureSource {
 public:
  virtual ~ImageFeatureSource() = default;
  virtual std::size_t dim() const = 0;
  virtual Vector features(const Package& p) const = 0;
};

/// Deterministic token embedder: a unit-variance normal stream keyed by
/// (seed, lowercased token), scaled by 1/sqrt(dim).
class HashTokenEmbedder final : public TextEmbedder {
 public:
  HashTokenEmbedder(std::size_t dim, std::uint64_t seed);
  std::size_t dim() const override { return dim_; }
  Vector embed(std::string_view token) const override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

Vector hash_embed_token(std::string_view token, const EmbeddingConfig& cfg);

struct PooledText {
  Vector vec;
  bool present = false;
};

/// Row mean; no rows gives a zero vector of `dim` with present=false.
PooledText pool_average(const Matrix& token_matrix, std::size_t dim);

Matrix embed_tokens(const std::vector<std::string>& tokens, const TextEmbedder& embedder);

/// Precomputed-feature file: header `dim=<D>`, then `<id> v1 ... vD` per line.
struct FeatureTable {
  std::size_t dim = 0;
  std::unordered_map<std::string, Vector> rows;
};

FeatureTable read_feature_table(const std::filesystem::path& path);
void write_feature_table(const std::filesystem::path& path, std::size_t dim,
                         const std::vector<std::pair<std::string, Vector>>& rows);

/// Loads the requested ids; a missing id is a not_found error naming it.
std::map<std::string, Vector> load_precomputed(const std::filesystem::path& path,
                                               const std::vector<std::string>& ids);

/// Image source backed by precomputed-feature files, resolved through each
/// package's `image_ref` relative to `base_dir`. Tables are cached per file.
class PrecomputedImageFeatures final : public ImageFeatureSource {
 public:
  PrecomputedImageFeatures(std::filesystem::path base_dir, std::size_t dim);
  std::size_t dim() const override { return dim_; }
  Vector features(const Package& p) const override;

 private:
  const FeatureTable& table(const std::string& ref) const;

  std::filesystem::path base_dir_;
  std::size_t dim_;
  mutable std::map<std::string, FeatureTable> cache_;
};

/// In-memory image source keyed by package id.
class MapImageFeatures final : public ImageFeatureSource {
 public:
  MapImageFeatures(std::size_t dim, std::unordered_map<std::string, Vector> rows)
      : dim_(dim), rows_(std::move(rows)) {}
  std::size_t dim() const override { return dim_; }
  Vector features(const Package& p) const override;

 private:
  std::size_t dim_;
  std::unordered_map<std::string, Vector> rows_;
};

FeatureBundle make_bundle(const Package& p, const TextEmbedder& text,
                          const ImageFeatureSource& image);

}  // namespace meir

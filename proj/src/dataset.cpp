#include "meir/dataset.hpp"

#include <algorithm>

#include "meir/error.hpp"

namespace meir {

namespace {

std::size_t snapshot_size(const std::map<std::string, std::string>& s, const std::string& key,
                          std::size_t fallback) {
  const auto it = s.find(key);
  if (it == s.end()) return fallback;
  try {
    return static_cast<std::size_t>(std::stoull(it->second));
  } catch (const std::exception&) {
    fail(ErrorCode::format, "manifest config '" + key + "' is not an integer");
  }
}

}  // namespace

EmbeddingConfig embedding_config_from(const std::map<std::string, std::string>& snapshot) {
  EmbeddingConfig e;
  e.text_dim = snapshot_size(snapshot, "text_dim", e.text_dim);
  e.image_dim = snapshot_size(snapshot, "image_dim", e.image_dim);
  e.seed = snapshot_size(snapshot, "embed_seed", e.seed);
  return e;
}

std::vector<Example> make_examples(const std::vector<Package>& packages, const TextEmbedder& text,
                                   const ImageFeatureSource& image) {
  std::vector<Example> out;
  out.reserve(packages.size());
  for (const auto& p : packages) {
    Example ex;
    ex.id = p.id;
    ex.bundle = make_bundle(p, text, image);
    ex.cluster = p.cluster_id.value_or(-1);
    ex.integrity = p.integrity;
    ex.manipulation = p.manipulation;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<Example> load_examples(const std::filesystem::path& corpus_file,
                                   const EmbeddingConfig& embed) {
  const auto packages = read_corpus(corpus_file);
  const HashTokenEmbedder text(embed.text_dim, embed.seed);
  const PrecomputedImageFeatures image(corpus_file.parent_path(), embed.image_dim);
  return make_examples(packages, text, image);
}

EmbeddingConfig embedding_config_near(const std::filesystem::path& corpus_file,
                                      const EmbeddingConfig& fallback) {
  const auto manifest = corpus_file.parent_path() / "manifest.json";
  if (!std::filesystem::exists(manifest)) return fallback;
  return embedding_config_from(read_manifest(manifest).config);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorCode::io, "no dataset directory " + dir.string());
  Dataset d;
  d.dir = dir;
  d.manifest = read_manifest(dir / "manifest.json");
  d.embed = embedding_config_from(d.manifest.config);
  d.reference = load_examples(dir / "reference.jsonl", d.embed);
  d.train = load_examples(dir / "train.jsonl", d.embed);
  d.val = load_examples(dir / "val.jsonl", d.embed);
  d.test = load_examples(dir / "test.jsonl", d.embed);
  return d;
}

Dataset dataset_from(const BuiltDataset& data, const EmbeddingConfig& embed) {
  Dataset d;
  d.manifest = data.manifest;
  d.embed = embed;
  std::map<Split, std::vector<Package>> by_split;
  for (const auto& p : data.packages) by_split[p.split].push_back(p);
  const HashTokenEmbedder text(embed.text_dim, embed.seed);
  const MapImageFeatures image(embed.image_dim, data.image_features);
  const auto examples = [&](Split s) {
    auto& v = by_split[s];
    std::sort(v.begin(), v.end(), [](const Package& a, const Package& b) { return a.id < b.id; });
    return make_examples(v, text, image);
  };
  d.reference = examples(Split::reference);
  d.train = examples(Split::train);
  d.val = examples(Split::val);
  d.test = examples(Split::test);
  return d;
}

ReferenceSet build_reference_set(const std::vector<Example>& reference, GpsSimilarity gps_sim) {
  ReferenceSet set;
  std::vector<std::string> ids;
  std::vector<FeatureBundle> bundles;
  for (const auto& ex : reference) {
    ids.push_back(ex.id);
    bundles.push_back(ex.bundle);
    set.cluster_of.emplace(ex.id, ex.cluster);
    set.rows.push_back(&ex);
  }
  set.index = std::make_shared<const ReferenceIndex>(std::move(ids), std::move(bundles), gps_sim);
  return set;
}

}  // namespace meir

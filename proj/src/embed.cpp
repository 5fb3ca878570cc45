#include "meir/embed.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "meir/error.hpp"
#include "meir/random.hpp"

namespace meir {

HashTokenEmbedder::HashTokenEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim == 0) fail(ErrorCode::invalid_argument, "text embedding dim must be > 0");
}

Vector HashTokenEmbedder::embed(std::string_view token) const {
  if (token.empty()) fail(ErrorCode::invalid_argument, "cannot embed an empty token");
  Rng rng(mix_seed(seed_, fnv1a(to_lower(token))));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
  Vector v(dim_);
  for (auto& x : v) x = rng.normal() * scale;
  return v;
}

Vector hash_embed_token(std::string_view token, const EmbeddingConfig& cfg) {
  return HashTokenEmbedder(cfg.text_dim, cfg.seed).embed(token);
}

PooledText pool_average(const Matrix& token_matrix, std::size_t dim) {
  PooledText out{Vector(dim, 0.0), false};
  if (token_matrix.rows == 0) return out;
  for (std::size_t r = 0; r < token_matrix.rows; ++r) {
    const auto row = token_matrix.row(r);
    for (std::size_t c = 0; c < dim; ++c) out.vec[c] += row[c];
  }
  const double inv = 1.0 / static_cast<double>(token_matrix.rows);
  for (auto& x : out.vec) x *= inv;
  out.present = true;
  return out;
}

Matrix embed_tokens(const std::vector<std::string>& tokens, const TextEmbedder& embedder) {
  Matrix m(tokens.size(), embedder.dim());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Vector v = embedder.embed(tokens[i]);
    std::copy(v.begin(), v.end(), m.row(i).begin());
  }
  return m;
}

namespace {

double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    fail(ErrorCode::format, where + ": bad value '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

}  // namespace

FeatureTable read_feature_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open feature file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("dim=", 0) != 0) {
    fail(ErrorCode::format, path.string() + ":1: expected header 'dim=<D>'");
  }
  FeatureTable table;
  {
    const std::string_view d = std::string_view(line).substr(4);
    const auto [ptr, ec] = std::from_chars(d.data(), d.data() + d.size(), table.dim);
    if (ec != std::errc() || table.dim == 0) {
      fail(ErrorCode::format, path.string() + ":1: bad dimension in header");
    }
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto fields = split_ws(line);
    if (fields.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (fields.size() != table.dim + 1) {
      fail(ErrorCode::format, where + ": expected " + std::to_string(table.dim) +
                                  " values, found " + std::to_string(fields.size() - 1));
    }
    Vector v(table.dim);
    for (std::size_t i = 0; i < table.dim; ++i) v[i] = parse_double(fields[i + 1], where);
    table.rows.emplace(std::string(fields[0]), std::move(v));
  }
  return table;
}

void write_feature_table(const std::filesystem::path& path, std::size_t dim,
                         const std::vector<std::pair<std::string, Vector>>& rows) {
  std::string buf = "dim=" + std::to_string(dim) + "\n";
  char num[32];
  for (const auto& [id, v] : rows) {
    if (v.size() != dim) fail(ErrorCode::format, "feature row " + id + " has wrong dimension");
    buf += id;
    for (double x : v) {
      const auto res = std::to_chars(num, num + sizeof num, x);
      buf += ' ';
      buf.append(num, res.ptr);
    }
    buf += '\n';
  }
  write_file_atomic(path, buf);
}

std::map<std::string, Vector> load_precomputed(const std::filesystem::path& path,
                                               const std::vector<std::string>& ids) {
  const FeatureTable table = read_feature_table(path);
  std::map<std::string, Vector> out;
  for (const auto& id : ids) {
    const auto it = table.rows.find(id);
    if (it == table.rows.end()) {
      fail(ErrorCode::not_found, "no features for id '" + id + "' in " + path.string());
    }
    out.emplace(id, it->second);
  }
  return out;
}

PrecomputedImageFeatures::PrecomputedImageFeatures(std::filesystem::path base_dir, std::size_t dim)
    : base_dir_(std::move(base_dir)), dim_(dim) {}

const FeatureTable& PrecomputedImageFeatures::table(const std::string& ref) const {
  auto it = cache_.find(ref);
  if (it == cache_.end()) {
    FeatureTable t = read_feature_table(base_dir_ / ref);
    if (t.dim != dim_) {
      fail(ErrorCode::format, ref + ": dimension " + std::to_string(t.dim) + " != expected " +
                                  std::to_string(dim_));
    }
    it = cache_.emplace(ref, std::move(t)).first;
  }
  return it->second;
}

Vector PrecomputedImageFeatures::features(const Package& p) const {
  if (!p.image_ref) return Vector(dim_, 0.0);
  const auto& t = table(*p.image_ref);
  const auto it = t.rows.find(p.id);
  if (it == t.rows.end()) {
    fail(ErrorCode::not_found, "no image features for id '" + p.id + "' in " + *p.image_ref);
  }
  return it->second;
}

Vector MapImageFeatures::features(const Package& p) const {
  const auto it = rows_.find(p.id);
  if (it == rows_.end()) fail(ErrorCode::not_found, "no image features for id '" + p.id + "'");
  return it->second;
}

FeatureBundle make_bundle(const Package& p, const TextEmbedder& text,
                          const ImageFeatureSource& image) {
  FeatureBundle b;
  b.image = image.features(p);
  b.present[0] = p.image_ref.has_value() || l2_norm(b.image) > 0.0;
  b.text_tokens = embed_tokens(p.tokens, text);
  auto pooled = pool_average(b.text_tokens, text.dim());
  b.text_pooled = std::move(pooled.vec);
  b.present[1] = pooled.present;
  b.gps = normalize_gps(p.gps.lat, p.gps.lon);
  return b;
}

}  // namespace meir

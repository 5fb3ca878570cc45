#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "meir/meir.h"

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::string take(meir_text* t) {
  std::string s(meir_text_data(t), meir_text_size(t));
  meir_text_destroy(t);
  return s;
}

struct Scratch {
  fs::path root = fs::temp_directory_path() / "meir_capi_test";
  Scratch() {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Scratch() { fs::remove_all(root); }
};

meir_config* small_config() {
  meir_config* c = nullptr;
  REQUIRE(meir_config_create(&c) == MEIR_OK);
  meir_config_set(c, "clusters", "40");
  meir_config_set(c, "epochs", "3");
  meir_config_set(c, "balanced_dim", "8");
  meir_config_set(c, "hidden_dim", "8");
  meir_config_set(c, "attention_dim", "8");
  return c;
}

}  // namespace

TEST_CASE("status names and errors") {
  CHECK(std::strcmp(meir_status_name(MEIR_OK), "ok") == 0);
  CHECK(std::strlen(meir_version()) > 0);

  meir_config* c = nullptr;
  CHECK(meir_config_load("/nonexistent/meir.cfg", &c) == MEIR_ERR_IO);
  CHECK(c == nullptr);
  CHECK(std::strlen(meir_last_error()) > 0);

  CHECK(meir_config_create(nullptr) == MEIR_ERR_INVALID_ARGUMENT);
  REQUIRE(meir_config_create(&c) == MEIR_OK);
  CHECK(*meir_last_error() == '\0');
  CHECK(meir_config_set(c, "", "1") == MEIR_ERR_INVALID_ARGUMENT);
  CHECK(meir_config_set(c, "lr", "0.01") == MEIR_OK);
  meir_text* dump = nullptr;
  REQUIRE(meir_config_dump(c, &dump) == MEIR_OK);
  CHECK(take(dump) == "lr = 0.01\n");
  meir_config_destroy(c);
  meir_config_destroy(nullptr);
}

TEST_CASE("pipeline through the C interface") {
  Scratch s;
  meir_config* cfg = small_config();
  const auto d1 = s.root / "d1", d2 = s.root / "d2";
  REQUIRE(meir_synth(cfg, 7, d1.c_str()) == MEIR_OK);
  REQUIRE(meir_synth(cfg, 7, d2.c_str()) == MEIR_OK);
  for (const char* f : {"manifest.json", "reference.jsonl", "train.jsonl", "val.jsonl", "test.jsonl",
                        "images.feat", "gazetteer.tsv"}) {
    CAPTURE(f);
    CHECK(slurp(d1 / f) == slurp(d2 / f));
  }
  CHECK_FALSE(fs::exists(d1 / ".lock"));

  const auto ck1 = s.root / "m1.ckpt", ck2 = s.root / "m2.ckpt";
  meir_text* log = nullptr;
  REQUIRE(meir_train(d1.c_str(), cfg, 3, ck1.c_str(), &log) == MEIR_OK);
  const auto log_text = take(log);
  CHECK(log_text.find("best_val_auc") != std::string::npos);
  REQUIRE(meir_train(d1.c_str(), cfg, 3, ck2.c_str(), nullptr) == MEIR_OK);
  CHECK(slurp(ck1) == slurp(ck2));
  CHECK(slurp(s.root / "m1.ckpt.log") == log_text);

  meir_model* model = nullptr;
  REQUIRE(meir_model_load(ck1.c_str(), &model) == MEIR_OK);
  meir_text* r1 = nullptr;
  meir_text* r2 = nullptr;
  REQUIRE(meir_eval(model, d1.c_str(), nullptr, &r1) == MEIR_OK);
  REQUIRE(meir_eval(model, d1.c_str(), nullptr, &r2) == MEIR_OK);
  const auto report = take(r1);
  CHECK(report == take(r2));
  for (const char* key : {"auc\t", "f1_tampered\t", "f1_clean\t"}) CHECK(report.find(key) != std::string::npos);

  CHECK(meir_eval(model, d1.c_str(), "audio", &r1) == MEIR_ERR_INVALID_ARGUMENT);
  REQUIRE(meir_eval(model, d1.c_str(), "gps", &r1) == MEIR_OK);
  CHECK(take(r1).find("missing\tgps") != std::string::npos);

  meir_text* pred = nullptr;
  REQUIRE(meir_predict(model, (d1 / "test.jsonl").c_str(), (d1 / "reference.jsonl").c_str(), &pred) == MEIR_OK);
  const auto lines = take(pred);
  std::istringstream in(lines);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    std::size_t tabs = 0;
    for (char ch : line) tabs += ch == '\t';
    CHECK(tabs == 4);
    ++n;
  }
  CHECK(n > 0);
  meir_model_destroy(model);

  meir_text* ret = nullptr;
  REQUIRE(meir_retrieve((d1 / "test.jsonl").c_str(), (d1 / "reference.jsonl").c_str(), "image,gps", 3, nullptr,
                        &ret) == MEIR_OK);
  CHECK(take(ret).find("\t3\t") != std::string::npos);
  CHECK(meir_retrieve((d1 / "test.jsonl").c_str(), (d1 / "reference.jsonl").c_str(), "smell", 3, nullptr, &ret) ==
        MEIR_ERR_INVALID_ARGUMENT);

  meir_text* srs = nullptr;
  REQUIRE(meir_baseline_srs(d1.c_str(), 10, &srs) == MEIR_OK);
  CHECK(take(srs).find("auc\t") != std::string::npos);

  meir_text* imp = nullptr;
  REQUIRE(meir_importance(d1.c_str(), 8, 2, 1, &imp) == MEIR_OK);
  CHECK(take(imp).find("importance_gps\t") != std::string::npos);

  // A reference split with no rows cannot feed the related branch.
  const auto empty = s.root / "empty";
  fs::copy(d1, empty);
  std::ofstream(empty / "reference.jsonl", std::ios::trunc).close();
  CHECK(meir_train(empty.c_str(), cfg, 3, (s.root / "e.ckpt").c_str(), nullptr) == MEIR_ERR_EMPTY_INDEX);
  CHECK(std::string(meir_last_error()).find("empty") != std::string::npos);
  meir_config_set(cfg, "related_branch", "false");
  CHECK(meir_train(empty.c_str(), cfg, 3, (s.root / "e.ckpt").c_str(), nullptr) == MEIR_OK);

  CHECK(meir_model_load((s.root / "missing.ckpt").c_str(), &model) == MEIR_ERR_IO);
  std::ofstream(s.root / "bad.ckpt") << "not a checkpoint\n";
  CHECK(meir_model_load((s.root / "bad.ckpt").c_str(), &model) == MEIR_ERR_FORMAT);
  meir_config_destroy(cfg);
}

TEST_CASE("a held lock blocks a second writer") {
  Scratch s;
  const auto d = s.root / "locked";
  fs::create_directories(d);
  std::ofstream(d / ".lock").close();
  meir_config* cfg = small_config();
  CHECK(meir_synth(cfg, 1, d.c_str()) == MEIR_ERR_IO);
  CHECK(std::string(meir_last_error()).find("lock") != std::string::npos);
  meir_config_destroy(cfg);
}

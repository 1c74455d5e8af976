#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "binnlab/datasets.hpp"
#include "test_util.hpp"

using namespace binnlab;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("binnlab_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("parity: truth table, labels, exact balance") {
  const Dataset tiny = gen_parity(2, 400, 5);
  std::set<std::pair<std::pair<int, int>, int>> seen;
  for (std::size_t s = 0; s < tiny.size(); ++s) {
    const int a = static_cast<int>(tiny.inputs(s, 0));
    const int b = static_cast<int>(tiny.inputs(s, 1));
    CHECK(static_cast<int>(tiny.targets[s]) == (a ^ b));
    seen.insert({{a, b}, a ^ b});
    if (a == 0 && b == 0) CHECK(tiny.targets[s] == 0);
  }
  CHECK(seen.size() == 4);  // all four truth-table rows appear

  const Dataset big = gen_parity(6, 10000, 7);
  std::size_t ones = 0;
  for (std::size_t t : big.targets) ones += t;
  CHECK(std::abs(static_cast<double>(ones) / 10000.0 - 0.5) < 0.01);

  CHECK(gen_parity(4, 16, 3).inputs.vec() == gen_parity(4, 16, 3).inputs.vec());
  CHECK(gen_parity(4, 16, 3).inputs.vec() != gen_parity(4, 16, 4).inputs.vec());
  CHECK_THROWS_AS(gen_parity(17, 4, 1), std::invalid_argument);
}

TEST_CASE("parity split is disjoint and exhaustive") {
  const Dataset ds = gen_parity(4, 20, 9, 0.75);
  CHECK(ds.train_indices.size() == 15);
  CHECK(ds.eval_indices.size() == 5);
  std::set<std::size_t> all(ds.train_indices.begin(), ds.train_indices.end());
  all.insert(ds.eval_indices.begin(), ds.eval_indices.end());
  CHECK(all.size() == 20);
}

TEST_CASE("temporal patterns: separability, chance under full noise, determinism") {
  // Maximally distinct templates: complementary extreme rates.
  SpikePattern pattern;
  Tensor hot({6, 4}, 0.05);
  Tensor cold({6, 4}, 0.95);
  pattern.class_templates = {hot, cold};
  pattern.noise_rate = 0.0;
  const Dataset ds = gen_from_spike_pattern(pattern, 50, 11, 1.0);

  // Rate-matching oracle: correlate each sample's spike count pattern with
  // the templates.
  std::size_t correct = 0;
  for (std::size_t s = 0; s < ds.size(); ++s) {
    double score_hot = 0.0, score_cold = 0.0;
    for (std::size_t t = 0; t < 6; ++t) {
      for (std::size_t c = 0; c < 4; ++c) {
        const double v = ds.inputs(s, t, c);
        score_hot += v * hot(t, c) + (1.0 - v) * (1.0 - hot(t, c));
        score_cold += v * cold(t, c) + (1.0 - v) * (1.0 - cold(t, c));
      }
    }
    const std::size_t guess = score_hot >= score_cold ? 0 : 1;
    correct += guess == ds.targets[s];
  }
  CHECK(correct == ds.size());

  // Full noise: class-conditional distributions identical by construction.
  SpikePattern noisy = pattern;
  noisy.noise_rate = 1.0;
  const Dataset chance = gen_from_spike_pattern(noisy, 200, 13, 1.0);
  double rate[2] = {0.0, 0.0};
  std::size_t count[2] = {0, 0};
  for (std::size_t s = 0; s < chance.size(); ++s) {
    double spikes = 0.0;
    for (std::size_t t = 0; t < 6; ++t) {
      for (std::size_t c = 0; c < 4; ++c) spikes += chance.inputs(s, t, c);
    }
    rate[chance.targets[s]] += spikes / 24.0;
    ++count[chance.targets[s]];
  }
  CHECK(std::abs(rate[0] / count[0] - 0.5) < 0.03);
  CHECK(std::abs(rate[1] / count[1] - 0.5) < 0.03);

  const Dataset a = gen_temporal_pattern(3, 8, 5, 0.1, 21);
  const Dataset b = gen_temporal_pattern(3, 8, 5, 0.1, 21);
  CHECK(a.inputs.vec() == b.inputs.vec());
  CHECK(a.targets == b.targets);
}

TEST_CASE("temporal pattern spike rates match the template") {
  SpikePattern pattern;
  Tensor tmpl({10, 3});
  for (std::size_t t = 0; t < 10; ++t) {
    for (std::size_t c = 0; c < 3; ++c) tmpl(t, c) = 0.1 + 0.08 * static_cast<double>(t % 5);
  }
  pattern.class_templates = {tmpl};
  pattern.noise_rate = 0.0;
  const Dataset ds = gen_from_spike_pattern(pattern, 800, 17, 1.0);
  for (std::size_t t = 0; t < 10; ++t) {
    for (std::size_t c = 0; c < 3; ++c) {
      double count = 0.0;
      for (std::size_t s = 0; s < ds.size(); ++s) count += ds.inputs(s, t, c);
      const double rate = count / static_cast<double>(ds.size());
      const double se = std::sqrt(tmpl(t, c) * (1.0 - tmpl(t, c)) / static_cast<double>(ds.size()));
      CHECK(std::abs(rate - tmpl(t, c)) < 3.0 * se + 1e-9);
    }
  }
}

TEST_CASE("csv round trip preserves the dataset") {
  TempDir dir;
  const std::string path = (dir.path / "parity.csv").string();
  const Dataset original = gen_parity(5, 64, 23);
  write_csv_dataset(original, path);
  const Dataset loaded = load_csv_dataset(path);
  CHECK(loaded.inputs.vec() == original.inputs.vec());
  CHECK(loaded.targets == original.targets);
  CHECK(loaded.n_classes == 2);
}

TEST_CASE("csv loader rejects malformed rows with their line numbers") {
  TempDir dir;
  const std::string path = (dir.path / "bad.csv").string();
  {
    std::ofstream out(path);
    out << "f0,f1,label\n1,0,1\n0,0.5,0\n";
  }
  try {
    load_csv_dataset(path);
    FAIL("expected a parse error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    CHECK(std::string(e.what()).find("0.5") != std::string::npos);
  }

  const std::string missing = (dir.path / "nolabel.csv").string();
  {
    std::ofstream out(missing);
    out << "f0,f1\n1,0\n";
  }
  CHECK_THROWS_AS(load_csv_dataset(missing), std::invalid_argument);
  CHECK_THROWS_AS(load_csv_dataset((dir.path / "absent.csv").string()), std::invalid_argument);
}

TEST_CASE("csv loader: header-only file gives an empty dataset") {
  TempDir dir;
  const std::string path = (dir.path / "empty.csv").string();
  {
    std::ofstream out(path);
    out << "f0,f1,label\n";
  }
  const Dataset ds = load_csv_dataset(path);
  CHECK(ds.size() == 0);
  CHECK(ds.n_classes == 0);
}

TEST_CASE("jsonl round trip preserves spike datasets") {
  TempDir dir;
  const std::string path = (dir.path / "spikes.jsonl").string();
  const Dataset original = gen_temporal_pattern(3, 7, 4, 0.2, 29, 10, 1.0);
  write_jsonl_dataset(original, path);
  const Dataset loaded = load_jsonl_dataset(path);
  CHECK(loaded.inputs.vec() == original.inputs.vec());
  CHECK(loaded.targets == original.targets);
  CHECK(loaded.spiking());

  CHECK_THROWS_AS(write_jsonl_dataset(gen_parity(3, 4, 1), path), std::invalid_argument);
  CHECK_THROWS_AS(write_csv_dataset(original, path), std::invalid_argument);
}

TEST_CASE("jsonl loader rejects non-binary spikes") {
  TempDir dir;
  const std::string path = (dir.path / "bad.jsonl").string();
  {
    std::ofstream out(path);
    out << R"({"spikes": [[0, 0.5]], "label": 0})" << "\n";
  }
  CHECK_THROWS_AS(load_jsonl_dataset(path), std::invalid_argument);
}

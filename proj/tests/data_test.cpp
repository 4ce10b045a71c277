#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "ogmge/data.hpp"
#include "oracles.hpp"

namespace ogmge {
namespace {

namespace fs = std::filesystem;

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "ogmge_data_test";
  fs::create_directories(dir);
  return dir / name;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

double oracle_accuracy(const Splits& s, Modality u) {
  const auto& tr = u == Modality::a ? s.train.x_a : s.train.x_v;
  const auto& te = u == Modality::a ? s.test.x_a : s.test.x_v;
  return oracle::logistic_oracle_accuracy(tr, s.train.labels, te, s.test.labels, s.train.num_classes);
}

TEST(Synthetic, ShapesAndStandardization) {
  SyntheticSpec spec;
  spec.n_train = 300;
  spec.n_val = 40;
  spec.n_test = 50;
  spec.dim_v = 9;
  const auto s = generate_synthetic(spec);
  EXPECT_EQ(s.train.size(), 300u);
  EXPECT_EQ(s.val.size(), 40u);
  EXPECT_EQ(s.test.size(), 50u);
  EXPECT_EQ(s.train.x_v.cols(), 9u);
  s.train.validate();
  for (std::size_t j = 0; j < 16; ++j) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < 300; ++i) m += s.train.x_a(i, j);
    m /= 300;
    for (std::size_t i = 0; i < 300; ++i) v += (s.train.x_a(i, j) - m) * (s.train.x_a(i, j) - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 300, 1.0, 1e-12);
  }
}

TEST(Synthetic, DeterministicPerSeed) {
  SyntheticSpec spec;
  spec.n_train = 100;
  spec.seed = 5;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  EXPECT_EQ(a.train.x_a, b.train.x_a);
  EXPECT_EQ(a.test.labels, b.test.labels);
  spec.seed = 6;
  EXPECT_NE(generate_synthetic(spec).train.x_a, a.train.x_a);
}

TEST(Synthetic, SplitsAreDisjointAndCoverThePopulation) {
  SyntheticSpec spec;
  spec.n_train = 120;
  spec.n_val = 30;
  spec.n_test = 40;
  const auto s = generate_synthetic(spec);
  std::set<std::vector<double>> rows;
  for (const auto* split : {&s.train, &s.val, &s.test})
    for (std::size_t i = 0; i < split->size(); ++i) {
      std::vector<double> r(split->x_a.row(i).begin(), split->x_a.row(i).end());
      r.insert(r.end(), split->x_v.row(i).begin(), split->x_v.row(i).end());
      rows.insert(std::move(r));
    }
  EXPECT_EQ(rows.size(), 190u);
}

TEST(Synthetic, DegenerateSpecsAreRejected) {
  SyntheticSpec spec;
  spec.num_classes = 1;
  EXPECT_THROW(generate_synthetic(spec), ContractError);
  spec = {};
  spec.n_test = 0;
  EXPECT_THROW(generate_synthetic(spec), ContractError);
  spec = {};
  spec.dim_v = 3;
  EXPECT_THROW(generate_synthetic(spec), ContractError);
  spec = {};
  spec.label_noise = 1.0;
  EXPECT_THROW(generate_synthetic(spec), ContractError);
}

TEST(Synthetic, AudioDominatesInTheDefaultImbalancedSetting) {
  SyntheticSpec spec;  // M=6, separations 2.0 / 0.8, noise 1.0
  spec.seed = 11;
  const auto s = generate_synthetic(spec);
  const double acc_a = oracle_accuracy(s, Modality::a);
  const double acc_v = oracle_accuracy(s, Modality::v);
  EXPECT_GE(acc_a - acc_v, 0.10) << "audio " << acc_a << " visual " << acc_v;
}

TEST(Synthetic, SeparableLimitGivesNearPerfectOracle) {
  SyntheticSpec spec;
  spec.separation_a = spec.separation_v = 2.0;
  spec.noise_std = 0.05;
  spec.n_train = 300;
  spec.n_test = 200;
  const auto s = generate_synthetic(spec);
  EXPECT_GE(oracle_accuracy(s, Modality::a), 0.99);
  EXPECT_GE(oracle_accuracy(s, Modality::v), 0.99);
}

TEST(Synthetic, UninformativeVisualIsNearChance) {
  SyntheticSpec spec;
  spec.separation_v = 0.0;
  spec.n_train = 600;
  spec.n_test = 1000;
  const auto s = generate_synthetic(spec);
  EXPECT_NEAR(oracle_accuracy(s, Modality::v), 1.0 / 6.0, 0.05);
}

TEST(Synthetic, AudioOracleIsMonotoneInSeparation) {
  double prev = 0.0;
  for (double sep : {0.5, 1.0, 2.0}) {
    SyntheticSpec spec;
    spec.separation_a = sep;
    spec.n_train = 600;
    spec.n_test = 600;
    spec.seed = 3;
    const double acc = oracle_accuracy(generate_synthetic(spec), Modality::a);
    EXPECT_GE(acc, prev) << "separation " << sep;
    prev = acc;
  }
}

TEST(Synthetic, LabelNoiseFlipsAboutTheRequestedFraction) {
  SyntheticSpec clean, noisy;
  clean.n_train = noisy.n_train = 5000;
  noisy.label_noise = 0.3;
  const auto a = generate_synthetic(clean);
  const auto b = generate_synthetic(noisy);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < 5000; ++i) changed += a.train.labels[i] != b.train.labels[i];
  // A resampled label keeps its class with probability 1/M.
  EXPECT_NEAR(static_cast<double>(changed) / 5000.0, 0.3 * 5.0 / 6.0, 0.02);
}

TEST(Minibatches, CoverEverySampleOnce) {
  Rng rng(1);
  const auto batches = minibatches(10, 5, rng);
  ASSERT_EQ(batches.size(), 2u);
  std::multiset<std::size_t> seen;
  for (const auto& b : batches) {
    EXPECT_EQ(b.size(), 5u);
    seen.insert(b.begin(), b.end());
  }
  EXPECT_EQ(seen.size(), 10u);
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 10u);
}

TEST(Minibatches, DropsSingletonTail) {
  Rng rng(2);
  const auto batches = minibatches(11, 5, rng);
  EXPECT_EQ(batches.size(), 2u);
  Rng rng2(2);
  const auto keep = minibatches(12, 5, rng2);
  ASSERT_EQ(keep.size(), 3u);
  EXPECT_EQ(keep.back().size(), 2u);
}

TEST(Minibatches, SameSeedSameOrder) {
  Rng a(4), b(4);
  EXPECT_EQ(minibatches(50, 8, a), minibatches(50, 8, b));
}

TEST(Minibatches, ContractViolations) {
  Rng rng(1);
  EXPECT_THROW(minibatches(10, 1, rng), ContractError);
  EXPECT_THROW(minibatches(1, 4, rng), ContractError);
}

TEST(Gather, PicksRowsInOrder) {
  SyntheticSpec spec;
  spec.n_train = 20;
  const auto s = generate_synthetic(spec);
  const std::vector<std::size_t> idx{7, 2};
  const auto b = gather(s.train, idx);
  EXPECT_EQ(b.labels, (std::vector<int>{s.train.labels[7], s.train.labels[2]}));
  EXPECT_EQ(b.x_v(1, 3), s.train.x_v(2, 3));
}

TEST(Csv, HandWrittenFixture) {
  const auto p = temp_file("fixture.csv");
  write_text(p, "label,a_0,a_1,v_0\n0,1.5,-2,0.25\n2, 3e-1 ,4,5\r\n1,0,0,-1e2\n");
  const auto b = load_csv(p.string());
  EXPECT_EQ(b.labels, (std::vector<int>{0, 2, 1}));
  EXPECT_EQ(b.num_classes, 3u);
  EXPECT_EQ(b.x_a, (Matrix{{1.5, -2}, {0.3, 4}, {0, 0}}));
  EXPECT_EQ(b.x_v, (Matrix{{0.25}, {5}, {-100}}));
}

TEST(Csv, RoundTripIsExact) {
  SyntheticSpec spec;
  spec.n_train = 50;
  spec.dim_v = 7;
  const auto s = generate_synthetic(spec);
  const auto p = temp_file("round.csv");
  write_csv(p.string(), s.train);
  const auto b = load_csv(p.string());
  EXPECT_EQ(b.x_a, s.train.x_a);
  EXPECT_EQ(b.x_v, s.train.x_v);
  EXPECT_EQ(b.labels, s.train.labels);
}

TEST(Csv, EmptyFileReportsNoDataRows) {
  const auto p = temp_file("empty.csv");
  write_text(p, "");
  try {
    load_csv(p.string());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("no data rows"), std::string::npos);
  }
  write_text(p, "label,a_0,v_0\n");
  EXPECT_THROW(load_csv(p.string()), DataError);
}

TEST(Csv, MalformedRowNamesItsLine) {
  const auto p = temp_file("bad.csv");
  write_text(p, "label,a_0,v_0\n0,1,2\n1,x,3\n");
  try {
    load_csv(p.string());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  write_text(p, "label,a_0,v_0\n0,1,2\n1,3\n");
  try {
    load_csv(p.string());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
}

TEST(Csv, BadHeadersAreRejected) {
  const auto p = temp_file("header.csv");
  for (const char* header : {"y,a_0,v_0", "label,a_0,a_2,v_0", "label,v_0,a_0", "label,a_0", "label,a_0,v_0,z"}) {
    write_text(p, std::string(header) + "\n0,1,2\n");
    EXPECT_THROW(load_csv(p.string()), DataError) << header;
  }
  EXPECT_THROW(load_csv((temp_file("missing") / "nope.csv").string()), DataError);
}

}  // namespace
}  // namespace ogmge

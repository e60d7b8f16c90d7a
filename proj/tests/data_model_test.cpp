#include <gtest/gtest.h>

#include <sstream>

#include "cfvi/data.hpp"
#include "cfvi/simulation.hpp"
#include "test_util.hpp"

namespace cfvi {
namespace {

using test::TempFile;

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no cfvi::Error thrown";
  return ErrorKind::InvalidArgument;
}

TEST(LoadCsv, ThreeRowsTwoFeatures) {
  TempFile f(".csv", "x1,x2,y,w\n1,2,3,0\n4,5,6,1\n7,8,9,0\n");
  const Dataset d = load_csv(f.path(), "y", "w");
  EXPECT_EQ(d.n(), 3u);
  EXPECT_EQ(d.p(), 2u);
  EXPECT_EQ(d.feature_names(), (std::vector<std::string>{"x1", "x2"}));
  EXPECT_EQ(d.features()(1, 1), 5.0);
  EXPECT_EQ(d.outcome()[2], 9.0);
  EXPECT_EQ(d.treatment()[1], 1);
}

TEST(LoadCsv, FeaturesKeepHeaderOrderAroundOutcomeAndTreatment) {
  TempFile f(".csv", "w,b,y,a\n1,2,3,4\n0,5,6,7\n");
  const Dataset d = load_csv(f.path(), "y", "w");
  EXPECT_EQ(d.feature_names(), (std::vector<std::string>{"b", "a"}));
  EXPECT_EQ(d.features()(1, 1), 7.0);
  EXPECT_EQ(d.column_index("a"), 1u);
  EXPECT_FALSE(d.column_index("y").has_value());
}

TEST(LoadCsv, TreatmentTwoIsNotBinary) {
  TempFile f(".csv", "x1,y,w\n1,2,0\n1,2,2\n");
  try {
    load_csv(f.path(), "y", "w");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonBinaryTreatment);
    EXPECT_EQ(e.row(), 2u);
  }
}

TEST(LoadCsv, NanInRowFiveReportsRowFive) {
  TempFile f(".csv", "x1,y,w\n1,1,0\n2,1,1\n3,1,0\n4,1,1\nNaN,1,0\n6,1,1\n");
  try {
    load_csv(f.path(), "y", "w");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFiniteValue);
    EXPECT_EQ(e.row(), 5u);
  }
}

TEST(LoadCsv, TreatmentAcceptsBooleanWords) {
  TempFile f(".csv", "x1,y,w\n1,2,TRUE\n1,2,false\n1,2,True\n");
  const Dataset d = load_csv(f.path(), "y", "w");
  EXPECT_EQ(d.treatment(), (std::vector<std::uint8_t>{1, 0, 1}));
}

TEST(LoadCsv, HandlesBomCrlfAndBlankLines) {
  TempFile f(".csv", "\xEF\xBB\xBFx1,y,w\r\n1.5,2,1\r\n\r\n-3e2,4,0\r\n");
  const Dataset d = load_csv(f.path(), "y", "w");
  EXPECT_EQ(d.n(), 2u);
  EXPECT_EQ(d.features()(1, 0), -300.0);
}

TEST(LoadCsv, Errors) {
  TempFile empty(".csv", "");
  EXPECT_EQ(kind_of([&] { load_csv(empty.path(), "y", "w"); }), ErrorKind::EmptyFile);
  TempFile header_only(".csv", "x1,y,w\n");
  EXPECT_EQ(kind_of([&] { load_csv(header_only.path(), "y", "w"); }), ErrorKind::EmptyFile);
  TempFile no_w(".csv", "x1,y\n1,2\n");
  EXPECT_EQ(kind_of([&] { load_csv(no_w.path(), "y", "w"); }), ErrorKind::MissingColumn);
  TempFile blank_cell(".csv", "x1,y,w\n1,,0\n");
  EXPECT_EQ(kind_of([&] { load_csv(blank_cell.path(), "y", "w"); }), ErrorKind::MissingValue);
  TempFile short_row(".csv", "x1,y,w\n1,2\n");
  EXPECT_EQ(kind_of([&] { load_csv(short_row.path(), "y", "w"); }), ErrorKind::MissingValue);
  TempFile text(".csv", "x1,y,w\nabc,2,0\n");
  EXPECT_EQ(kind_of([&] { load_csv(text.path(), "y", "w"); }), ErrorKind::NonFiniteValue);
  TempFile inf(".csv", "x1,y,w\n1,inf,0\n");
  EXPECT_EQ(kind_of([&] { load_csv(inf.path(), "y", "w"); }), ErrorKind::NonFiniteValue);
  EXPECT_EQ(kind_of([&] { load_csv("/nonexistent/file.csv", "y", "w"); }), ErrorKind::FileError);
}

TEST(LoadCsv, RoundTripIsBitExact) {
  const Dataset d = gen_experiment1(200, 5).data;
  TempFile f(".csv");
  write_csv(d, f.path());
  const Dataset back = load_csv(f.path(), "y", "w");
  EXPECT_TRUE(back == d);

  TempFile again(".csv");
  write_csv(back, again.path());
  EXPECT_EQ(f.read(), again.read());
}

TEST(Dataset, RejectsBrokenInvariants) {
  FeatureMatrix X(2, 1);
  EXPECT_EQ(kind_of([&] { Dataset::create(X, {1.0}, {0, 1}); }), ErrorKind::DimensionMismatch);
  EXPECT_EQ(kind_of([&] { Dataset::create(X, {1.0, 2.0}, {0, 3}); }), ErrorKind::NonBinaryTreatment);
  EXPECT_EQ(kind_of([&] { Dataset::create(X, {1.0, NAN}, {0, 1}); }), ErrorKind::NonFiniteValue);
  FeatureMatrix bad(2, 1);
  bad(0, 0) = INFINITY;
  EXPECT_EQ(kind_of([&] { Dataset::create(bad, {1.0, 2.0}, {0, 1}); }), ErrorKind::NonFiniteValue);
  EXPECT_EQ(kind_of([&] { Dataset::create(FeatureMatrix(0, 1), {}, {}); }), ErrorKind::TooFewRows);
  EXPECT_EQ(kind_of([&] { Dataset::create(X, {1.0, 2.0}, {0, 1}, {"a", "b"}); }), ErrorKind::DimensionMismatch);
}

TEST(Validate, ValidDatasetIsOk) {
  const auto r = validate(gen_experiment1(50, 1).data);
  EXPECT_TRUE(r.ok());
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Validate, AllControlsWarnsDegenerateArm) {
  FeatureMatrix X(3, 1);
  const auto r = validate(Dataset::create(X, {1.0, 2.0, 3.0}, {0, 0, 0}));
  EXPECT_TRUE(r.ok());
  EXPECT_TRUE(r.has_warning(Warning::DegenerateTreatmentArm));
}

TEST(Validate, SingleRowIsTooFew) {
  FeatureMatrix X(1, 1);
  const auto r = validate(Dataset::create(X, {1.0}, {1}));
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(r.error->kind(), ErrorKind::TooFewRows);
}

TEST(Validate, ConstantOutcomeWarns) {
  FeatureMatrix X(2, 1);
  EXPECT_TRUE(validate(Dataset::create(X, {4.0, 4.0}, {0, 1})).has_warning(Warning::ConstantOutcome));
}

TEST(FeatureSet, SortsDeduplicatesAndComplements) {
  const FeatureSet fs{4, 1, 4, 2};
  EXPECT_EQ(fs.indices(), (std::vector<std::size_t>{1, 2, 4}));
  EXPECT_TRUE(fs.contains(2));
  EXPECT_FALSE(fs.contains(3));
  EXPECT_EQ(FeatureSet::all(5).without(fs).indices(), (std::vector<std::size_t>{0, 3}));
  EXPECT_EQ(FeatureSet({2, 1}).hash(), FeatureSet({1, 2}).hash());
  EXPECT_NE(FeatureSet({1}).hash(), FeatureSet({2}).hash());
  EXPECT_NE(FeatureSet{}.hash(), FeatureSet({0}).hash());
  EXPECT_EQ(kind_of([&] { FeatureSet{}.check(3); }), ErrorKind::EmptyFeatureSet);
  EXPECT_EQ(kind_of([&] { FeatureSet{3}.check(3); }), ErrorKind::InvalidArgument);
}

TEST(Errors, CategoriesDriveExitCodes) {
  EXPECT_EQ(category(ErrorKind::InvalidParams), ErrorCategory::config);
  EXPECT_EQ(category(ErrorKind::NonFiniteValue), ErrorCategory::data);
  EXPECT_EQ(category(ErrorKind::HomogeneousEffect), ErrorCategory::estimation);
  const Error e(ErrorKind::MissingValue, "gap", 3);
  EXPECT_EQ(e.message(), "gap");
  EXPECT_STREQ(e.what(), "MissingValue: gap");
}

TEST(Rng, StreamsAreReproducibleAndDistinct) {
  Rng a(derive_seed(1, 2)), b(derive_seed(1, 2)), c(derive_seed(1, 3));
  for (int k = 0; k < 100; ++k) {
    const auto va = a.next();
    EXPECT_EQ(va, b.next());
    EXPECT_NE(va, c.next());
  }
}

TEST(Rng, VariatesHaveTheRightMoments) {
  Rng rng(99);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  std::vector<int> counts(7, 0);
  for (int k = 0; k < n; ++k) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
    ++counts[rng.index(7)];
  }
  EXPECT_NEAR(su / n, 0.5, 4 * std::sqrt(1.0 / 12 / n));
  EXPECT_NEAR(sn / n, 0.0, 4 / std::sqrt(double(n)));
  EXPECT_NEAR(sn2 / n, 1.0, 4 * std::sqrt(2.0 / n));
  for (int c : counts) EXPECT_NEAR(c, n / 7.0, 4 * std::sqrt(n / 7.0));
}

}  // namespace
}  // namespace cfvi

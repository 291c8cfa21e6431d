#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "test_support.hpp"

using namespace dermo;
using dermo::testing::dataset_with_counts;
using dermo::testing::id_labels;
using dermo::testing::kIsicCounts;
using dermo::testing::TempDir;

namespace {

const char* kHeader = "image,MEL,NV,BCC,AKIEC,BKL,DF,VASC\n";

Dataset parse(const std::string& text) {
  std::istringstream in(text);
  return parse_ground_truth(in, std::nullopt);
}

template <typename E>
std::string message_of(const std::string& text) {
  try {
    parse(text);
  } catch (const E& e) {
    return e.what();
  }
  ADD_FAILURE() << "expected exception";
  return {};
}

}  // namespace

TEST(LabelSpace, LesionClassesInFixedOrder) {
  const auto s = LabelSpace::isic2018();
  ASSERT_EQ(s.size(), 7u);
  EXPECT_EQ(s.codes(), (std::vector<std::string>{"MEL", "NV", "BCC", "AKIEC", "BKL", "DF", "VASC"}));
  EXPECT_EQ(s.display_name(1), "Melanocytic nevus");
  EXPECT_EQ(s.index_of("VASC"), 6u);
  EXPECT_EQ(s.csv_header(), "image,MEL,NV,BCC,AKIEC,BKL,DF,VASC");
}

TEST(LabelSpace, RejectsDuplicateOrTooFewCodes) {
  EXPECT_THROW(LabelSpace({"A", "A"}), ContractError);
  EXPECT_THROW(LabelSpace({"A"}), ContractError);
  EXPECT_THROW(LabelSpace({"A", ""}), ContractError);
}

TEST(ParseGroundTruth, DecodesOneHotRow) {
  const auto ds = parse(std::string(kHeader) + "ISIC_0000001,1.0,0.0,0.0,0.0,0.0,0.0,0.0\n");
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.records()[0].image_id, "ISIC_0000001");
  EXPECT_EQ(ds.records()[0].label, 0u);
}

TEST(ParseGroundTruth, CountsClasses) {
  const auto ds = parse(std::string(kHeader) + "a,1.0,0.0,0.0,0.0,0.0,0.0,0.0\n" +
                        "b,0.0,1.0,0.0,0.0,0.0,0.0,0.0\n" + "c,0.0,1.0,0.0,0.0,0.0,0.0,0.0\n");
  EXPECT_EQ(ds.class_counts(), (std::vector<std::size_t>{1, 2, 0, 0, 0, 0, 0}));
}

TEST(ParseGroundTruth, AcceptsCrlfAndBom) {
  const auto ds = parse("\xEF\xBB\xBF" "image,MEL,NV,BCC,AKIEC,BKL,DF,VASC\r\n"
                        "x,0.0,0.0,0.0,0.0,0.0,0.0,1.0\r\n");
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.records()[0].label, 6u);
}

TEST(ParseGroundTruth, MalformedHeaderNamesColumn) {
  const auto msg = message_of<FormatError>("image,MEL,NV,BCC,AKIEC,BKL,DFX,VASC\n");
  EXPECT_NE(msg.find("DFX"), std::string::npos) << msg;
  EXPECT_THROW(parse("img,MEL,NV,BCC,AKIEC,BKL,DF,VASC\n"), FormatError);
  EXPECT_THROW(parse("image,MEL,NV\n"), FormatError);
}

TEST(ParseGroundTruth, NonOneHotRowNamesRow) {
  auto msg = message_of<LabelError>(std::string(kHeader) + "bad_row,1.0,1.0,0.0,0.0,0.0,0.0,0.0\n");
  EXPECT_NE(msg.find("bad_row"), std::string::npos) << msg;
  msg = message_of<LabelError>(std::string(kHeader) + "zero_row,0.0,0.0,0.0,0.0,0.0,0.0,0.0\n");
  EXPECT_NE(msg.find("zero_row"), std::string::npos) << msg;
  EXPECT_THROW(parse(std::string(kHeader) + "half,0.5,0.5,0.0,0.0,0.0,0.0,0.0\n"), LabelError);
}

TEST(ParseGroundTruth, MissingFilesAreAllListed) {
  TempDir dir("gt_missing");
  dermo::testing::write_text(dir / "present.jpg", "x");
  std::istringstream in(std::string(kHeader) + "present,1.0,0.0,0.0,0.0,0.0,0.0,0.0\n" +
                        "gone1,1.0,0.0,0.0,0.0,0.0,0.0,0.0\n" + "gone2,0.0,1.0,0.0,0.0,0.0,0.0,0.0\n");
  try {
    parse_ground_truth(in, dir.path());
    FAIL() << "expected MissingFileError";
  } catch (const MissingFileError& e) {
    EXPECT_EQ(e.missing_ids(), (std::vector<std::string>{"gone1", "gone2"}));
  }
}

TEST(ParseGroundTruth, ResolvesJpegAndPngExtensions) {
  TempDir dir("gt_ext");
  dermo::testing::write_text(dir / "a.jpeg", "x");
  dermo::testing::write_text(dir / "b.png", "x");
  std::istringstream in(std::string(kHeader) + "a,1.0,0.0,0.0,0.0,0.0,0.0,0.0\nb,0.0,1.0,0.0,0.0,0.0,0.0,0.0\n");
  const auto ds = parse_ground_truth(in, dir.path());
  EXPECT_EQ(ds.records()[0].image_path.filename(), "a.jpeg");
  EXPECT_EQ(ds.records()[1].image_path.filename(), "b.png");
}

TEST(ParseGroundTruth, DuplicateIdsRejected) {
  EXPECT_THROW(parse(std::string(kHeader) + "a,1.0,0.0,0.0,0.0,0.0,0.0,0.0\na,1.0,0.0,0.0,0.0,0.0,0.0,0.0\n"),
               FormatError);
}

/// Property: serialize then parse preserves the (id, label) set, for random datasets.
TEST(ParseGroundTruth, RoundTripPreservesRecordSet) {
  Rng rng(17);
  const auto space = LabelSpace::isic2018();
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> counts(7);
    for (auto& c : counts) c = rng.below(12);
    const auto ds = dataset_with_counts(space, counts, "T" + std::to_string(trial));
    std::ostringstream out;
    write_ground_truth(out, ds);
    std::istringstream in(out.str());
    const auto back = parse_ground_truth(in, std::nullopt);
    EXPECT_EQ(id_labels(back), id_labels(ds));
    EXPECT_EQ(back.class_counts(), ds.class_counts());
  }
}

TEST(Dataset, ClassCountsMatchRecords) {
  const auto ds = dataset_with_counts(LabelSpace::isic2018(), {3, 0, 2, 1, 0, 0, 4});
  EXPECT_EQ(ds.class_counts(), (std::vector<std::size_t>{3, 0, 2, 1, 0, 0, 4}));
  EXPECT_EQ(ds.labeled_count(), 10u);
}

TEST(Fraction, RoundHalfUpIsExact) {
  const auto tenth = Fraction::from_double(0.10);
  EXPECT_EQ(tenth.round_half_up_times(115), 12u);  // 11.5
  EXPECT_EQ(tenth.round_half_up_times(114), 11u);
  EXPECT_EQ(tenth.round_half_up_times(1099), 110u);
  EXPECT_EQ(Fraction::from_double(0.5).round_half_up_times(3), 2u);
}

/// Oracle: round-half-up of n/10 is floor((n + 5) / 10) in integers.
TEST(StratifiedSplit, IsicCountsAtTenPercent) {
  const auto ds = dataset_with_counts(LabelSpace::isic2018(), kIsicCounts);
  ASSERT_EQ(ds.size(), 10015u);
  const auto split = stratified_split(ds, Fraction::from_double(0.10), 0);
  std::vector<std::size_t> oracle;
  for (auto n : kIsicCounts) oracle.push_back(std::max<std::size_t>(1, (n + 5) / 10));
  EXPECT_EQ(split.validation.class_counts(), oracle);
  EXPECT_EQ(split.validation.class_counts(), (std::vector<std::size_t>{111, 671, 51, 33, 110, 12, 14}));
}

TEST(StratifiedSplit, FloorOfOnePerClass) {
  const auto ds = dataset_with_counts(LabelSpace({"A", "B"}), {2, 2});
  const auto split = stratified_split(ds, Fraction::from_double(0.10), 3);
  EXPECT_EQ(split.validation.class_counts(), (std::vector<std::size_t>{1, 1}));
  const auto half = stratified_split(ds, Fraction::from_double(0.5), 3);
  EXPECT_EQ(half.validation.class_counts(), (std::vector<std::size_t>{1, 1}));
}

TEST(StratifiedSplit, SingletonClassNamed) {
  const auto ds = dataset_with_counts(LabelSpace::isic2018(), {5, 5, 5, 1, 5, 5, 5});
  try {
    stratified_split(ds, Fraction::from_double(0.1), 0);
    FAIL() << "expected SplitError";
  } catch (const SplitError& e) {
    EXPECT_NE(std::string(e.what()).find("AKIEC"), std::string::npos) << e.what();
  }
}

TEST(StratifiedSplit, FractionOutsideUnitIntervalRejected) {
  const auto ds = dataset_with_counts(LabelSpace({"A", "B"}), {4, 4});
  EXPECT_THROW(stratified_split(ds, Fraction::from_double(0.0), 0), ContractError);
  EXPECT_THROW(stratified_split(ds, Fraction::from_double(1.0), 0), ContractError);
}

/// Property over random datasets, fractions and seeds: disjoint, covering, quota-exact, deterministic.
TEST(StratifiedSplit, RandomizedInvariants) {
  Rng gen(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 2 + gen.below(6);
    std::vector<std::string> codes;
    for (std::size_t c = 0; c < k; ++c) codes.push_back("C" + std::to_string(c));
    std::vector<std::size_t> counts(k);
    for (auto& n : counts) n = gen.below(3) == 0 ? 0 : 2 + gen.below(60);
    const auto ds = dataset_with_counts(LabelSpace(codes), counts);
    const auto fraction = Fraction::from_double(0.05 + 0.9 * gen.uniform());
    const auto seed = gen.next();
    const auto split = stratified_split(ds, fraction, seed);

    std::set<std::string> train_ids, val_ids;
    for (const auto& r : split.train.records()) train_ids.insert(r.image_id);
    for (const auto& r : split.validation.records()) val_ids.insert(r.image_id);
    for (const auto& id : val_ids) EXPECT_FALSE(train_ids.count(id)) << id;
    std::set<std::string> all = train_ids;
    all.insert(val_ids.begin(), val_ids.end());
    EXPECT_EQ(all.size(), ds.size());
    EXPECT_EQ(train_ids.size() + val_ids.size(), ds.size());

    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      // Oracle in long double: the quotient is exact whenever it lands on a .5 boundary.
      const long double exact =
          static_cast<long double>(fraction.numerator) * static_cast<long double>(counts[c]) /
          static_cast<long double>(fraction.denominator);
      const auto expect = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(exact + 0.5L)));
      EXPECT_EQ(split.validation.class_counts()[c], expect);
    }

    const auto again = stratified_split(ds, fraction, seed);
    std::ostringstream m1, m2;
    write_split_manifest(m1, ds, split);
    write_split_manifest(m2, ds, again);
    EXPECT_EQ(m1.str(), m2.str());
  }
}

TEST(StratifiedSplit, DifferentSeedsChangeMembership) {
  const auto ds = dataset_with_counts(LabelSpace::isic2018(), kIsicCounts);
  std::ostringstream a, b;
  write_split_manifest(a, ds, stratified_split(ds, Fraction::from_double(0.1), 1));
  write_split_manifest(b, ds, stratified_split(ds, Fraction::from_double(0.1), 2));
  EXPECT_NE(a.str(), b.str());
}

TEST(StratifiedSplit, IndependentOfInputOrder) {
  const auto ds = dataset_with_counts(LabelSpace({"A", "B", "C"}), {30, 12, 5});
  auto recs = ds.records();
  std::reverse(recs.begin(), recs.end());
  const Dataset reversed(ds.label_space(), recs);
  const auto s1 = stratified_split(ds, Fraction::from_double(0.2), 9);
  const auto s2 = stratified_split(reversed, Fraction::from_double(0.2), 9);
  EXPECT_EQ(id_labels(s1.validation), id_labels(s2.validation));
}

TEST(SplitManifest, RoundTripRebuildsSplit) {
  const auto ds = dataset_with_counts(LabelSpace({"A", "B"}), {20, 7});
  const auto split = stratified_split(ds, Fraction::from_double(0.1), 5);
  std::ostringstream out;
  write_split_manifest(out, ds, split);
  EXPECT_EQ(out.str().substr(0, 13), "image,subset\n");
  std::istringstream in(out.str());
  const auto rebuilt = apply_split_manifest(ds, read_split_manifest(in), 5, split.fraction);
  EXPECT_EQ(id_labels(rebuilt.validation), id_labels(split.validation));
  EXPECT_EQ(id_labels(rebuilt.train), id_labels(split.train));
}

TEST(SplitManifest, MismatchedIdsRejected) {
  const auto ds = dataset_with_counts(LabelSpace({"A", "B"}), {3, 3});
  std::istringstream in("image,subset\nIMG_0_0,train\nnot_there,validation\n");
  EXPECT_THROW(apply_split_manifest(ds, read_split_manifest(in), 0, Fraction::from_double(0.1)), AlignmentError);
  std::istringstream bad("image,subset\nx,holdout\n");
  EXPECT_THROW(read_split_manifest(bad), FormatError);
}

TEST(ScanImageDir, FindsImagesSortedById) {
  TempDir dir("scan");
  for (const char* n : {"b.png", "a.JPG", "c.jpeg", "notes.txt"}) dermo::testing::write_text(dir / n, "x");
  const auto ds = scan_image_dir(dir.path(), LabelSpace::isic2018());
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.records()[0].image_id, "a");
  EXPECT_EQ(ds.records()[2].image_id, "c");
  EXPECT_FALSE(ds.records()[0].label.has_value());
}

TEST(LabelSpaceFromCsv, SniffsHeader) {
  TempDir dir("sniff");
  dermo::testing::write_text(dir / "a.csv", "image,RED,GREEN\nx,1.0,0.0\n");
  dermo::testing::write_text(dir / "b.csv", kHeader);
  EXPECT_EQ(label_space_from_csv(dir / "a.csv").codes(), (std::vector<std::string>{"RED", "GREEN"}));
  EXPECT_EQ(label_space_from_csv(dir / "b.csv").display_name(0), "Melanoma");
}

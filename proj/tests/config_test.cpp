#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace dermo;
using dermo::testing::TempDir;

TEST(RunConfig, DefaultsDescribeTheReferenceSetup) {
  const RunConfig c;
  EXPECT_EQ(c.label_space(), LabelSpace::isic2018());
  EXPECT_EQ(c.fraction().numerator, 1);
  EXPECT_EQ(c.fraction().denominator, 10);
  EXPECT_EQ(c.backbones, (std::vector<std::string>{"resnet50", "densenet121", "mobilenet"}));
  EXPECT_TRUE(c.augment_flips);
  EXPECT_TRUE(c.class_weights.empty());
  EXPECT_EQ(c.combiner, "soft");
  const auto s = c.schedule();
  ASSERT_EQ(s.phases.size(), 2u);
  EXPECT_EQ(s.phases[0].trainable_groups, GroupSet{ParamGroup::kHead});
  EXPECT_EQ(s.phases[0].learning_rate, 0.01);
  EXPECT_EQ(s.phases[0].max_epochs, 10u);
  EXPECT_EQ(s.phases[0].patience, 5u);
  EXPECT_EQ(s.phases[1].learning_rate, 0.001);
  EXPECT_EQ(s.phases[1].max_epochs, 100u);
  EXPECT_EQ(s.phases[1].patience, 10u);
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, UnknownKeysAndBadTypesRejected) {
  RunConfig c;
  EXPECT_THROW(merge_config(c, nlohmann::json{{"learning_rate", 0.1}}), FormatError);
  EXPECT_THROW(merge_config(c, nlohmann::json{{"seed", "seven"}}), FormatError);
  EXPECT_THROW(merge_config(c, nlohmann::json::array()), FormatError);
}

TEST(RunConfig, ValidateCatchesBadValues) {
  RunConfig c;
  c.split_fraction = 1.0;
  EXPECT_THROW(c.validate(), ContractError);
  c = RunConfig{};
  c.class_weights = {1.0, 2.0};
  EXPECT_THROW(c.validate(), ContractError);
  c = RunConfig{};
  c.combiner = "median";
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(RunConfig, RelativePathsResolveAgainstTheFile) {
  TempDir dir("config");
  dermo::testing::write_text(dir / "c.json",
                             R"({"ground_truth": "gt.csv", "image_dir": "/abs/images", "seed": 9,
                                 "class_weights": [1, 2, 3], "classes": ["A", "B", "C"]})");
  const auto c = load_config(dir / "c.json");
  EXPECT_EQ(c.ground_truth, dir.path() / "gt.csv");
  EXPECT_EQ(c.image_dir, std::filesystem::path("/abs/images"));
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.class_weights, (std::vector<double>{1, 2, 3}));
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, SnapshotReloadsToTheSameConfig) {
  TempDir dir("snapshot");
  RunConfig c;
  c.ground_truth = dir / "gt.csv";
  c.seed = 1234;
  c.phase2_epochs = 3;
  c.class_weights = {0.5, 1, 1, 1, 1, 1, 2};
  std::filesystem::create_directories(dir / "run" / "stub");
  dermo::testing::write_text(dir / "run" / "stub" / "config.json",
                             nlohmann::json{{"config", config_to_json(c)}, {"backbone", "stub"}}.dump());
  const auto back = load_config(dir / "run" / "stub" / "config.json");
  EXPECT_EQ(config_to_json(back), config_to_json(c));
}

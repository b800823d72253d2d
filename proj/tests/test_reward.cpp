#include <random>
#include <sstream>

#include <fmt/format.h>

#include "doctest.h"
#include "support.hpp"

#include "emofeed/reward.hpp"

using namespace emofeed;

namespace {

std::string regression(const std::string& think, double v, double a) {
  return fmt::format("<think>{}</think><answer>{{\"valence\": {:.2f}, \"arousal\": {:.2f}}}</answer>",
                     think, v, a);
}

}  // namespace

TEST_CASE("parse_transcript examples") {
  const Transcript ok = parse_transcript(
      R"(<think>bright colors, playful</think><answer>{"valence": 7.25, "arousal": 6.10}</answer>)");
  CHECK(ok.well_formed);
  CHECK(ok.think == "bright colors, playful");
  CHECK(ok.number("valence") == 7.25);
  CHECK(ok.number("arousal") == 6.10);

  const Transcript no_think = parse_transcript(R"(<answer>{"valence": 7}</answer>)");
  CHECK_FALSE(no_think.well_formed);
  CHECK(no_think.answer_fields.empty());

  const Transcript not_object = parse_transcript("<think>x</think><answer>not an object</answer>");
  CHECK_FALSE(not_object.well_formed);
  CHECK(not_object.answer_fields.empty());
}

TEST_CASE("parse_transcript structure rules") {
  CHECK(parse_transcript("  \n<think>a</think>\n <answer>{\"k\": \"v\"}</answer>\n").well_formed);
  CHECK(parse_transcript("<think></think><answer>{}</answer>").well_formed);
  CHECK_FALSE(parse_transcript("x<think>a</think><answer>{}</answer>").well_formed);
  CHECK_FALSE(parse_transcript("<think>a</think><answer>{}</answer>x").well_formed);
  CHECK_FALSE(parse_transcript("<think>a</think>x<answer>{}</answer>").well_formed);
  CHECK_FALSE(parse_transcript("<think>a</think><answer>{}</answer><answer>{}</answer>").well_formed);
  CHECK_FALSE(parse_transcript("<think>a<think>b</think><answer>{}</answer>").well_formed);
  CHECK_FALSE(parse_transcript("<think>a</think><answer>{\"k\": [1]}</answer>").well_formed);
  CHECK_FALSE(parse_transcript("<think>a</think><answer>{\"k\": null}</answer>").well_formed);
  CHECK_FALSE(parse_transcript("<think>a</think><answer>{\"k\": true}</answer>").well_formed);
  CHECK_FALSE(parse_transcript("<think>a</think><answer>3.5</answer>").well_formed);

  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> byte(1, 127);
  for (int i = 0; i < 200; ++i) {
    std::string junk(static_cast<std::size_t>(byte(rng) % 40), ' ');
    for (char& c : junk) c = static_cast<char>(byte(rng));
    const Transcript t = parse_transcript(junk);
    if (!t.well_formed) CHECK(t.answer_fields.empty());
  }
}

TEST_CASE("answer fields round-trip to two decimals") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> cents(100, 900);
  for (int i = 0; i < 200; ++i) {
    const double v = cents(rng) / 100.0;
    const double a = cents(rng) / 100.0;
    const Transcript t = parse_transcript(regression("r", v, a));
    REQUIRE(t.well_formed);
    CHECK(fmt::format("{:.2f}", *t.number("valence")) == fmt::format("{:.2f}", v));
    CHECK(fmt::format("{:.2f}", *t.number("arousal")) == fmt::format("{:.2f}", a));
  }
}

TEST_CASE("format_reward") {
  CHECK(format_reward(regression("fine", 5, 5)) == 1.0);
  CHECK(format_reward("") == 0.0);
  CHECK(format_reward(R"(<answer>{"valence": 5}</answer><think>x</think>)") == 0.0);
}

TEST_CASE("va_step_reward") {
  CHECK(va_step_reward({5.0, 5.0}, {5.5, 5.6}, 0.70) == 1.0);
  CHECK(va_step_reward({5.0, 5.0}, {5.0, 7.0}, 0.70) == 0.5);
  for (double tau : {0.01, 0.7, 3.0}) CHECK(va_step_reward({3.3, 6.1}, {3.3, 6.1}, tau) == 1.0);

  // |dV| exactly tau on the two-decimal grid counts as inside
  CHECK(va_step_reward({5.00, 5.00}, {5.70, 9.00}, 0.70) == 0.5);
  CHECK(va_step_reward({3.20, 8.10}, {3.90, 7.40}, 0.70) == 1.0);
  CHECK(va_step_reward({5.00, 5.00}, {5.71, 5.00}, 0.70) == 0.5);

  CHECK(va_step_reward({5.0, 5.0}, {5.0, 7.0}, 0.70, StepRewardMode::kJoint) == 0.0);
  CHECK(va_step_reward({5.0, 5.0}, {5.5, 5.6}, 0.70, StepRewardMode::kJoint) == 1.0);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(1.0, 9.0);
  for (int i = 0; i < 500; ++i) {
    const double r = va_step_reward({u(rng), u(rng)}, {u(rng), u(rng)}, 0.7);
    CHECK((r == 0.0 || r == 0.5 || r == 1.0));
  }
}

TEST_CASE("va_continuous_reward") {
  CHECK(va_continuous_reward({4.2, 6.6}, {4.2, 6.6}) == 1.0);
  CHECK(va_continuous_reward({1, 1}, {9, 9}) == 0.0);
  CHECK(va_continuous_reward({5, 5}, {7, 3}) == doctest::Approx(0.75));

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(1.0, 9.0);
  std::uniform_real_distribution<double> step(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const VAScore gt(u(rng), u(rng));
    const VAScore near(u(rng), u(rng));
    const double r = va_continuous_reward(near, gt);
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
    // moving the prediction away from gt on one axis never raises the reward
    const double dir = near.valence() >= gt.valence() ? 1.0 : -1.0;
    const double farther = std::clamp(near.valence() + dir * step(rng), 1.0, 9.0);
    CHECK(va_continuous_reward({farther, near.arousal()}, gt) <= r + 1e-15);
  }
}

TEST_CASE("classification_reward") {
  CHECK(classification_reward(EmotionClass::kAwe, EmotionClass::kAwe) == 1.0);
  CHECK(classification_reward(EmotionClass::kFear, EmotionClass::kAwe) == 0.0);
  CHECK(classification_reward(std::nullopt, EmotionClass::kAwe) == 0.0);
}

TEST_CASE("understanding_reward") {
  const RewardWeights w;
  CHECK(understanding_reward(regression("ok", 5.0, 5.0), RewardTask::kRegression, VAScore(5.5, 5.6),
                             std::nullopt, w) == doctest::Approx(1.0));
  CHECK(understanding_reward("garbage", RewardTask::kRegression, VAScore(5, 5), std::nullopt, w) == 0.0);
  CHECK(understanding_reward("garbage", RewardTask::kClassification, std::nullopt,
                             EmotionClass::kAwe, w) == 0.0);
  CHECK(understanding_reward(R"(<think>x</think><answer>{"emotion_class": "fear"}</answer>)",
                             RewardTask::kClassification, std::nullopt, EmotionClass::kAwe, w) ==
        doctest::Approx(0.25));
  CHECK_THROWS_AS(understanding_reward(regression("x", 5, 5), RewardTask::kRegression, std::nullopt,
                                       EmotionClass::kAwe, w),
                  ValidationError);
  CHECK_THROWS_AS(understanding_reward(regression("x", 5, 5), RewardTask::kClassification,
                                       VAScore(5, 5), std::nullopt, w),
                  ValidationError);

  // think content never matters
  for (const char* think : {"", "short", "a much longer chain of reasoning {with braces}"}) {
    CHECK(understanding_reward(regression(think, 6.2, 3.1), RewardTask::kRegression, VAScore(6.0, 4.0),
                               std::nullopt, w) == doctest::Approx(0.25 + 0.75 * 0.5));
  }

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(1.0, 9.0);
  for (int i = 0; i < 200; ++i) {
    const double r = understanding_reward(regression("t", u(rng), u(rng)), RewardTask::kRegression,
                                          VAScore(u(rng), u(rng)), std::nullopt, w);
    CHECK(r >= 0.0);
    CHECK(r <= w.alpha1 + w.alpha2 + 1e-12);
  }
}

TEST_CASE("RewardWeights validation") {
  RewardWeights w;
  CHECK_NOTHROW(w.validate());
  w.tau = 0.0;
  CHECK_THROWS_AS(w.validate(), ValidationError);
  w = RewardWeights{};
  w.alpha1 = -0.1;
  CHECK_THROWS_AS(w.validate(), ValidationError);
  w = RewardWeights{};
  w.content_weight = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(w.validate(), ValidationError);
}

TEST_CASE("generator_reward") {
  const EmotionField field;
  RewardWeights w;
  const VAScore target(6.5, 3.5);
  const Vec anchor = field_preimage(field, target);

  const RewardBreakdown at_anchor = generator_reward(anchor, target, field, anchor, w);
  CHECK(at_anchor.emotion == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(at_anchor.content == 1.0);
  CHECK(at_anchor.total == doctest::Approx(2.0).epsilon(1e-9));

  // field score differs by (2, 2) from the condition while sitting on the anchor
  const VAScore shifted(target.valence() - 2.0, target.arousal() + 2.0);
  const RewardBreakdown off = generator_reward(anchor, shifted, field, anchor, w);
  CHECK(off.emotion == doctest::Approx(0.75).epsilon(1e-9));
  CHECK(off.total == doctest::Approx(1.75).epsilon(1e-9));

  const Vec moved = anchor + Vec::Constant(2, 1.0);
  const RewardBreakdown drift = generator_reward(moved, target, field, anchor, w);
  CHECK(drift.content == doctest::Approx(std::exp(-1.0)));
  CHECK(drift.total == doctest::Approx(w.emotion_weight * drift.emotion + w.content_weight * drift.content));

  w.content_weight = 0.0;
  const RewardBreakdown pure = generator_reward(moved, target, field, anchor, w);
  CHECK(pure.total == doctest::Approx(pure.emotion));

  CHECK_THROWS_AS(generator_reward(Vec::Zero(3), target, field, anchor, w), ValidationError);
}

TEST_CASE("transcript corpus reader") {
  std::istringstream in("first line\nsecond\n---\n\n---\nthird\n");
  const auto records = read_transcript_corpus(in);
  REQUIRE(records.size() == 3);
  CHECK(records[0] == "first line\nsecond");
  CHECK(records[1] == "");
  CHECK(records[2] == "third");
}

TEST_CASE("ground truth lines") {
  const GroundTruth r = parse_ground_truth("regression 6.25 3.50");
  CHECK(r.task == RewardTask::kRegression);
  CHECK(*r.va == VAScore(6.25, 3.5));
  const GroundTruth c = parse_ground_truth("classification awe");
  CHECK(*c.emotion == EmotionClass::kAwe);
  CHECK_THROWS_AS(parse_ground_truth("regression 6.25"), ValidationError);
  CHECK_THROWS_AS(parse_ground_truth("classification joy"), ValidationError);
  CHECK_THROWS_AS(parse_ground_truth("ranking 1"), ValidationError);
}

TEST_CASE("golden corpus scores") {
  using testsupport::test_data;
  const auto corpus = read_transcript_corpus(test_data("reward_corpus.txt"));
  const auto truth = read_ground_truth(test_data("reward_truth.txt"));
  CHECK(corpus.size() >= 30);
  CHECK(render_audit(audit_rewards(corpus, truth, RewardWeights{})) ==
        testsupport::slurp(test_data("reward_golden.csv")));
}

TEST_CASE("malformed corpus scores zero format reward") {
  using testsupport::test_data;
  const auto corpus = read_transcript_corpus(test_data("malformed_corpus.txt"));
  const auto truth = read_ground_truth(test_data("malformed_truth.txt"));
  REQUIRE(corpus.size() == 10);
  const RewardAudit audit = audit_rewards(corpus, truth, RewardWeights{});
  for (const auto& row : audit.rows) {
    CHECK(row.format == 0.0);
    CHECK(row.combined == 0.0);
  }
  CHECK(audit.well_formed == 0);
}

TEST_CASE("tau override only moves the task column") {
  using testsupport::test_data;
  const auto corpus = read_transcript_corpus(test_data("reward_corpus.txt"));
  const auto truth = read_ground_truth(test_data("reward_truth.txt"));
  RewardWeights wide;
  wide.tau = 3.0;
  const RewardAudit base = audit_rewards(corpus, truth, RewardWeights{});
  const RewardAudit loose = audit_rewards(corpus, truth, wide);
  bool any_changed = false;
  for (std::size_t i = 0; i < base.rows.size(); ++i) {
    CHECK(base.rows[i].format == loose.rows[i].format);
    if (truth[i].task == RewardTask::kClassification) CHECK(base.rows[i].task == loose.rows[i].task);
    any_changed |= base.rows[i].task != loose.rows[i].task;
  }
  CHECK(any_changed);
  CHECK_THROWS_AS(audit_rewards(corpus, std::vector<GroundTruth>(truth.begin(), truth.end() - 1),
                                RewardWeights{}),
                  ValidationError);
}

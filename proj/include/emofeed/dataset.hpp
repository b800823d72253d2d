#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emofeed/emotion.hpp"

namespace emofeed {

struct LexiconEntry {
  std::string word;
  double v_mean = 0.0;
  double v_sd = 0.0;
  double a_mean = 0.0;
  double a_sd = 0.0;
};

/// Header names of the lexicon columns.
struct LexiconColumns {
  std::string word = "word";
  std::string v_mean = "v_mean";
  std::string v_sd = "v_sd";
  std::string a_mean = "a_mean";
  std::string a_sd = "a_sd";

  /// Column names of the published affective-norms CSV.
  static LexiconColumns norms_file();
};

/// Reads a comma-separated lexicon with a header row. Rows that break the
/// entry invariants raise ValidationError naming the row number.
std::vector<LexiconEntry> load_lexicon(const std::string& path,
                                       const LexiconColumns& columns = {},
                                       std::vector<std::string>* warnings = nullptr);

using CategoryMapping = std::map<EmotionClass, std::vector<std::string>>;

/// Lines of `class = word, word, ...`; `#` starts a comment.
CategoryMapping load_category_mapping(const std::string& path);

inline constexpr double kSigmaFloor = 0.05;

struct CategoryStats {
  EmotionClass emotion = EmotionClass::kAmusement;
  double mu_v = kScaleMid;
  double sigma_v = 1.0;
  double mu_a = kScaleMid;
  double sigma_a = 1.0;
};

using CategoryTable = std::array<CategoryStats, 8>;

/// Per class: mean of member-word means, root-mean-square of member-word
/// sds, sds floored at kSigmaFloor.
CategoryTable derive_category_stats(const std::vector<LexiconEntry>& lexicon,
                                    const CategoryMapping& mapping);

const CategoryStats& stats_for(const CategoryTable& table, EmotionClass emotion);

/// Independent Gaussian draws for V and A, clamped into the scale.
VAScore sample_va(const CategoryStats& stats, Rng& rng);

enum class Split { kTrain, kTest };
std::string_view to_string(Split split);

struct Caption {
  std::string id;
  std::string neutral_prompt;
  std::optional<std::string> emotional_prompt;
  EmotionClass emotion = EmotionClass::kAmusement;
  std::optional<Split> split;
};

/// Line-delimited JSON objects with id, neutral_prompt, emotional_prompt
/// (optional), emotion_class and split (optional).
std::vector<Caption> load_captions(const std::string& path);

/// How captions are assigned to splits. Without a test fraction, a caption's
/// own split field decides, falling back to "test" when it has no emotional
/// prompt. With a test fraction, a hash of the id decides.
struct SplitRule {
  std::optional<double> test_fraction;
};

struct DatasetRecord {
  std::string id;
  std::string neutral_prompt;
  std::optional<std::string> emotional_prompt;
  EmotionClass emotion = EmotionClass::kAmusement;
  double valence = kScaleMid;
  double arousal = kScaleMid;
  Split split = Split::kTrain;
};

/// One record per caption with a freshly sampled V-A pair (sub-seeded by
/// id), sorted by id. Test records drop the emotional prompt.
std::vector<DatasetRecord> build_dataset(const std::vector<Caption>& captions,
                                         const CategoryTable& stats, std::uint64_t seed,
                                         const SplitRule& rule = {});

std::string serialize_record(const DatasetRecord& record);
void write_dataset(const std::vector<DatasetRecord>& records, const std::string& path);

struct Violation {
  std::size_t line = 0;
  std::string message;
};

struct ClassSummary {
  std::size_t count = 0;
  double mean_v = 0.0;
  double sd_v = 0.0;
  double mean_a = 0.0;
  double sd_a = 0.0;
  std::size_t clamped = 0;  ///< records with a component on the scale edge
};

struct ValidationReport {
  std::size_t records = 0;
  std::vector<Violation> violations;
  std::map<EmotionClass, ClassSummary> classes;
  std::size_t train = 0;
  std::size_t test = 0;

  bool ok() const { return violations.empty(); }
  std::string render() const;
};

/// Re-reads a dataset file and checks every record invariant; keeps going
/// past bad lines.
ValidationReport validate_dataset(const std::string& path);

}  // namespace emofeed

#include "emofeed/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"

namespace emofeed {

using nlohmann::json;

LexiconColumns LexiconColumns::norms_file() {
  return {"Word", "V.Mean.Sum", "V.SD.Sum", "A.Mean.Sum", "A.SD.Sum"};
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(field));
      field.clear();
    } else {
      field += c;
    }
  }
  fields.push_back(trim(field));
  return fields;
}

std::optional<double> parse_double(const std::string& text) {
  double value = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) return std::nullopt;
  return value;
}

}  // namespace

std::vector<LexiconEntry> load_lexicon(const std::string& path, const LexiconColumns& columns,
                                       std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot read lexicon '{}'", path));
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(fmt::format("lexicon '{}' is empty", path));
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw ValidationError(fmt::format("lexicon '{}': missing column '{}'", path, name));
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_word = column(columns.word);
  const std::size_t c_vm = column(columns.v_mean);
  const std::size_t c_vs = column(columns.v_sd);
  const std::size_t c_am = column(columns.a_mean);
  const std::size_t c_as = column(columns.a_sd);
  const std::size_t needed = std::max({c_word, c_vm, c_vs, c_am, c_as}) + 1;

  std::vector<LexiconEntry> entries;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() < needed) {
      throw ValidationError(fmt::format("lexicon '{}' row {}: expected at least {} fields, got {}",
                                        path, row, needed, fields.size()));
    }
    auto number = [&](std::size_t c, const std::string& name) {
      auto v = parse_double(fields[c]);
      if (!v) {
        throw ValidationError(fmt::format("lexicon '{}' row {}: column '{}' is not a number: '{}'",
                                          path, row, name, fields[c]));
      }
      return *v;
    };
    LexiconEntry e{fields[c_word], number(c_vm, columns.v_mean), number(c_vs, columns.v_sd),
                   number(c_am, columns.a_mean), number(c_as, columns.a_sd)};
    if (e.word.empty()) {
      throw ValidationError(fmt::format("lexicon '{}' row {}: empty word", path, row));
    }
    if (!in_scale(e.v_mean) || !in_scale(e.a_mean)) {
      throw ValidationError(fmt::format(
          "lexicon '{}' row {}: invariant 'means within [1, 9]' violated for '{}'", path, row,
          e.word));
    }
    if (!(std::isfinite(e.v_sd) && e.v_sd >= 0.0 && std::isfinite(e.a_sd) && e.a_sd >= 0.0)) {
      throw ValidationError(fmt::format(
          "lexicon '{}' row {}: invariant 'standard deviations finite and nonnegative' violated "
          "for '{}'",
          path, row, e.word));
    }
    entries.push_back(std::move(e));
  }
  if (entries.empty() && warnings) {
    warnings->push_back(fmt::format("lexicon '{}' has no rows after the header", path));
  }
  return entries;
}

CategoryMapping load_category_mapping(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot read category mapping '{}'", path));
  CategoryMapping mapping;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(fmt::format("category mapping '{}' line {}: expected 'class = words'",
                                        path, row));
    }
    const EmotionClass emotion = parse_emotion(trim(line.substr(0, eq)));
    std::stringstream words(line.substr(eq + 1));
    std::string word;
    while (std::getline(words, word, ',')) {
      if (auto w = trim(word); !w.empty()) mapping[emotion].push_back(w);
    }
  }
  return mapping;
}

CategoryTable derive_category_stats(const std::vector<LexiconEntry>& lexicon,
                                    const CategoryMapping& mapping) {
  std::map<std::string, const LexiconEntry*> index;
  for (const auto& e : lexicon) index.emplace(e.word, &e);

  CategoryTable table;
  for (std::size_t c = 0; c < kAllEmotionClasses.size(); ++c) {
    const EmotionClass emotion = kAllEmotionClasses[c];
    auto it = mapping.find(emotion);
    if (it == mapping.end() || it->second.empty()) {
      throw ValidationError(fmt::format("category '{}' has no mapped words", to_string(emotion)));
    }
    double sum_v = 0.0, sum_a = 0.0, sq_v = 0.0, sq_a = 0.0;
    for (const auto& word : it->second) {
      auto found = index.find(word);
      if (found == index.end()) {
        throw ValidationError(fmt::format("category '{}' maps unknown word '{}'",
                                          to_string(emotion), word));
      }
      const LexiconEntry& e = *found->second;
      sum_v += e.v_mean;
      sum_a += e.a_mean;
      sq_v += e.v_sd * e.v_sd;
      sq_a += e.a_sd * e.a_sd;
    }
    const auto n = static_cast<double>(it->second.size());
    table[c] = {emotion, sum_v / n, std::max(kSigmaFloor, std::sqrt(sq_v / n)), sum_a / n,
                std::max(kSigmaFloor, std::sqrt(sq_a / n))};
  }
  return table;
}

const CategoryStats& stats_for(const CategoryTable& table, EmotionClass emotion) {
  return table[static_cast<std::size_t>(emotion)];
}

VAScore sample_va(const CategoryStats& stats, Rng& rng) {
  std::normal_distribution<double> v(stats.mu_v, stats.sigma_v);
  std::normal_distribution<double> a(stats.mu_a, stats.sigma_a);
  const double draw_v = v(rng);
  const double draw_a = a(rng);
  return clamp_va(draw_v, draw_a);
}

std::string_view to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

namespace {

std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  return std::nullopt;
}

}  // namespace

std::vector<Caption> load_captions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot read captions '{}'", path));
  std::vector<Caption> captions;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    auto j = json::parse(line, nullptr, false);
    auto fail = [&](const std::string& why) {
      return ValidationError(fmt::format("captions '{}' line {}: {}", path, row, why));
    };
    if (j.is_discarded() || !j.is_object()) throw fail("not a JSON object");
    for (const char* key : {"id", "neutral_prompt", "emotion_class"}) {
      if (!j.contains(key) || !j[key].is_string()) throw fail(fmt::format("missing '{}'", key));
    }
    Caption c;
    c.id = j["id"].get<std::string>();
    c.neutral_prompt = j["neutral_prompt"].get<std::string>();
    auto emotion = try_parse_emotion(j["emotion_class"].get<std::string>());
    if (!emotion) throw fail("unknown emotion_class");
    c.emotion = *emotion;
    if (j.contains("emotional_prompt") && !j["emotional_prompt"].is_null()) {
      if (!j["emotional_prompt"].is_string()) throw fail("emotional_prompt is not a string");
      c.emotional_prompt = j["emotional_prompt"].get<std::string>();
    }
    if (j.contains("split")) {
      auto split = j["split"].is_string() ? parse_split(j["split"].get<std::string>()) : std::nullopt;
      if (!split) throw fail("split must be 'train' or 'test'");
      c.split = split;
    }
    captions.push_back(std::move(c));
  }
  return captions;
}

std::vector<DatasetRecord> build_dataset(const std::vector<Caption>& captions,
                                         const CategoryTable& stats, std::uint64_t seed,
                                         const SplitRule& rule) {
  if (rule.test_fraction) {
    require(*rule.test_fraction >= 0.0 && *rule.test_fraction <= 1.0,
            "test fraction must lie in [0, 1]");
  }
  std::set<std::string> seen;
  std::vector<DatasetRecord> records;
  records.reserve(captions.size());
  for (const auto& c : captions) {
    if (!seen.insert(c.id).second) {
      throw ValidationError(fmt::format("duplicate caption id '{}'", c.id));
    }
    Split split;
    if (rule.test_fraction) {
      const double u = static_cast<double>(mix_seed(fnv1a(c.id)) % 1000000) / 1e6;
      split = u < *rule.test_fraction ? Split::kTest : Split::kTrain;
    } else {
      split = c.split.value_or(c.emotional_prompt ? Split::kTrain : Split::kTest);
    }
    if (split == Split::kTrain && !c.emotional_prompt) {
      throw ValidationError(fmt::format("train caption '{}' has no emotional prompt", c.id));
    }
    Rng rng(mix_seed(seed, fnv1a(c.id)));
    const VAScore va = sample_va(stats_for(stats, c.emotion), rng);
    DatasetRecord r;
    r.id = c.id;
    r.neutral_prompt = c.neutral_prompt;
    if (split == Split::kTrain) r.emotional_prompt = c.emotional_prompt;
    r.emotion = c.emotion;
    r.valence = std::round(va.valence() * 100.0) / 100.0;
    r.arousal = std::round(va.arousal() * 100.0) / 100.0;
    r.split = split;
    records.push_back(std::move(r));
  }
  std::sort(records.begin(), records.end(),
            [](const DatasetRecord& a, const DatasetRecord& b) { return a.id < b.id; });
  return records;
}

std::string serialize_record(const DatasetRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["neutral_prompt"] = r.neutral_prompt;
  if (r.emotional_prompt) j["emotional_prompt"] = *r.emotional_prompt;
  j["emotion_class"] = std::string(to_string(r.emotion));
  j["valence"] = r.valence;
  j["arousal"] = r.arousal;
  j["split"] = std::string(to_string(r.split));
  return j.dump();
}

void write_dataset(const std::vector<DatasetRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError(fmt::format("cannot write dataset '{}'", path));
  for (const auto& r : records) out << serialize_record(r) << '\n';
  if (!out) throw ValidationError(fmt::format("failed writing dataset '{}'", path));
}

ValidationReport validate_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(fmt::format("cannot read dataset '{}'", path));
  ValidationReport report;
  std::map<EmotionClass, std::vector<std::pair<double, double>>> values;
  std::set<std::string> ids;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    ++report.records;
    auto violate = [&](const std::string& msg) { report.violations.push_back({row, msg}); };
    if (line.back() == '\r') {
      violate("CRLF line ending");
      line.pop_back();
    }
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      violate("record is not a JSON object");
      continue;
    }
    bool structural = false;
    for (const char* key : {"id", "neutral_prompt", "emotion_class", "split"}) {
      if (!j.contains(key) || !j[key].is_string()) {
        violate(fmt::format("missing or non-string field '{}'", key));
        structural = true;
      }
    }
    for (const char* key : {"valence", "arousal"}) {
      if (!j.contains(key) || !j[key].is_number()) {
        violate(fmt::format("missing or non-numeric field '{}'", key));
        structural = true;
      }
    }
    if (structural) continue;
    if (!ids.insert(j["id"].get<std::string>()).second) {
      violate(fmt::format("duplicate id '{}'", j["id"].get<std::string>()));
    }
    auto emotion = try_parse_emotion(j["emotion_class"].get<std::string>());
    if (!emotion) violate("emotion_class is not one of the eight classes");
    const double v = j["valence"].get<double>();
    const double a = j["arousal"].get<double>();
    if (!in_scale(v)) violate(fmt::format("valence {} outside [1, 9]", v));
    if (!in_scale(a)) violate(fmt::format("arousal {} outside [1, 9]", a));
    auto split = parse_split(j["split"].get<std::string>());
    if (!split) {
      violate("split must be 'train' or 'test'");
    } else if (*split == Split::kTest && j.contains("emotional_prompt")) {
      violate("test record carries an emotional_prompt");
    } else if (*split == Split::kTrain &&
               (!j.contains("emotional_prompt") || !j["emotional_prompt"].is_string())) {
      violate("train record lacks an emotional_prompt");
    }
    if (split) (*split == Split::kTrain ? report.train : report.test) += 1;
    if (emotion) values[*emotion].emplace_back(v, a);
  }
  for (const auto& [emotion, pairs] : values) {
    ClassSummary s;
    s.count = pairs.size();
    for (const auto& [v, a] : pairs) {
      s.mean_v += v;
      s.mean_a += a;
      if (v == kScaleMin || v == kScaleMax || a == kScaleMin || a == kScaleMax) ++s.clamped;
    }
    s.mean_v /= static_cast<double>(s.count);
    s.mean_a /= static_cast<double>(s.count);
    for (const auto& [v, a] : pairs) {
      s.sd_v += (v - s.mean_v) * (v - s.mean_v);
      s.sd_a += (a - s.mean_a) * (a - s.mean_a);
    }
    s.sd_v = std::sqrt(s.sd_v / static_cast<double>(s.count));
    s.sd_a = std::sqrt(s.sd_a / static_cast<double>(s.count));
    report.classes[emotion] = s;
  }
  return report;
}

std::string ValidationReport::render() const {
  std::string out = fmt::format("records: {}\ntrain: {}\ntest: {}\nviolations: {}\n", records,
                                train, test, violations.size());
  for (const auto& v : violations) out += fmt::format("  line {}: {}\n", v.line, v.message);
  out += "class,count,mean_v,sd_v,mean_a,sd_a,edge_clamped\n";
  for (const auto& [emotion, s] : classes) {
    out += fmt::format("{},{},{:.4f},{:.4f},{:.4f},{:.4f},{}\n", to_string(emotion), s.count,
                       s.mean_v, s.sd_v, s.mean_a, s.sd_a, s.clamped);
  }
  return out;
}

}  // namespace emofeed

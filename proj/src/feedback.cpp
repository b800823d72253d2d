#include "emofeed/feedback.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <future>

#include <fmt/format.h>

#include "httplib.h"

namespace emofeed {

using nlohmann::json;

void FeedbackConfig::validate() const {
  require(max_iterations >= 1, "feedback: max_iterations must be at least 1");
  require(group_size >= 2, "feedback: group_size must be at least 2");
  require(max_in_flight >= 1, "feedback: max_in_flight must be at least 1");
  require(refine_retries >= 0, "feedback: refine_retries must be nonnegative");
}

double compute_loss(const VAScore& target, const VAScore& evaluated, LossMetric metric) {
  const double dv = target.valence() - evaluated.valence();
  const double da = target.arousal() - evaluated.arousal();
  if (metric == LossMetric::kSquared) return dv * dv + da * da;
  return std::abs(dv) + std::abs(da);
}

double malformed_loss(LossMetric metric) {
  return compute_loss(VAScore(kScaleMin, kScaleMin), VAScore(kScaleMax, kScaleMax), metric);
}

BestWorst select_best_worst(std::span<const double> losses) {
  require(losses.size() >= 2, "select_best_worst: need at least two losses");
  BestWorst out;
  for (std::size_t i = 1; i < losses.size(); ++i) {
    if (losses[i] < losses[out.best]) out.best = static_cast<int>(i);
    if (losses[i] > losses[out.worst]) out.worst = static_cast<int>(i);
  }
  out.degenerate = losses[out.best] == losses[out.worst];
  return out;
}

json Sample::descriptor() const {
  return {{"id", id}, {"latent", std::vector<double>(latent.begin(), latent.end())}};
}

// Request texts. The loss request is brace-free so that no template
// placeholder can survive substitution unnoticed.

std::string build_loss_request(const VAScore& target, const std::string& sample_context) {
  return fmt::format(
      "You are rating the emotion a generated image conveys. Valence runs from 1 (very "
      "negative) to 9 (very positive); arousal runs from 1 (very calm) to 9 (very excited). "
      "The generation targeted valence {:.2f} and arousal {:.2f}. Rate the attached sample "
      "{} on both scales as floats between 1 and 9 rounded to two decimals, paying attention "
      "to lighting, weather, background objects and facial expressions. Reason inside "
      "<think></think>, then give the answer inside <answer></answer> as a JSON object with "
      "the keys \"valence\" and \"arousal\".",
      target.valence(), target.arousal(), sample_context);
}

std::string build_grad_request(const SampleSummary& best, const SampleSummary& worst,
                               const VAScore& target, const std::string& current_prompt,
                               bool degenerate) {
  std::string text = fmt::format(
      "Prompt used for generation: \"{}\". Target emotion: valence {:.2f}, arousal {:.2f}.\n"
      "Best sample {}: evaluated valence {:.2f}, arousal {:.2f}, loss {:.2f}.\n"
      "Worst sample {}: evaluated valence {:.2f}, arousal {:.2f}, loss {:.2f}.\n",
      current_prompt, target.valence(), target.arousal(), best.id, best.score.valence(),
      best.score.arousal(), best.loss, worst.id, worst.score.valence(), worst.score.arousal(),
      worst.loss);
  if (degenerate) {
    text += "Note: every sample in this group scored the same loss, so best and worst "
            "coincide.\n";
  }
  text +=
      "1. Analysis: compare the best sample with the worst one against the target values. "
      "State what the best sample must change to move its emotion closer to the target, "
      "looking at lighting and brightness, weather and environment, color and composition, "
      "and characters and objects.\n"
      "2. Optimization: rewrite the prompt with a richer emotional description that applies "
      "those changes while keeping its core meaning.\n"
      "3. Return only raw JSON with exactly two keys: \"analysis\" (one string) and "
      "\"optimized_prompt\" (one string). No Markdown, no headings, no extra text.";
  return text;
}

std::string build_update_request(const std::string& analysis, const std::string& current_prompt,
                                 const VAScore& target) {
  return fmt::format(
      "Current prompt: \"{}\". Target emotion: valence {:.2f}, arousal {:.2f}.\n"
      "Analysis of the last generation round: {}\n"
      "Rewrite the prompt so the next images move toward the target emotion, adding concrete "
      "details about lighting, weather, color, composition, characters or objects while "
      "preserving what the prompt depicts. Return only raw JSON with exactly two keys: "
      "\"analysis\" (one string) and \"optimized_prompt\" (one string).",
      current_prompt, target.valence(), target.arousal(), analysis);
}

Refinement parse_refinement(const std::string& raw) {
  auto decoded = json::parse(raw, nullptr, false);
  if (decoded.is_discarded() || !decoded.is_object()) {
    throw ValidationError("refinement response is not a JSON object");
  }
  for (const char* key : {"analysis", "optimized_prompt"}) {
    if (!decoded.contains(key) || !decoded[key].is_string()) {
      throw ValidationError(fmt::format("refinement response lacks string key '{}'", key));
    }
  }
  Refinement out{decoded["analysis"].get<std::string>(),
                 decoded["optimized_prompt"].get<std::string>(), std::nullopt, std::nullopt};
  if (out.optimized_prompt.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw ValidationError("refinement response has an empty optimized_prompt");
  }
  if (decoded.contains("condition")) {
    const auto& c = decoded["condition"];
    if (!c.is_object() || !c.contains("valence") || !c.contains("arousal") ||
        !c["valence"].is_number() || !c["arousal"].is_number()) {
      throw ValidationError("refinement response has a malformed condition");
    }
    out.condition = clamp_va(c["valence"].get<double>(), c["arousal"].get<double>());
  }
  if (decoded.contains("anchor")) {
    const auto& a = decoded["anchor"];
    if (!a.is_array() || a.empty() ||
        !std::all_of(a.begin(), a.end(), [](const json& x) { return x.is_number(); })) {
      throw ValidationError("refinement response has a malformed anchor");
    }
    const auto values = a.get<std::vector<double>>();
    out.anchor = Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(values.size()));
  }
  return out;
}

std::string_view to_string(RequestKind kind) {
  switch (kind) {
    case RequestKind::kEvaluate: return "evaluate";
    case RequestKind::kSuggest: return "suggest";
    case RequestKind::kUpdate: return "update";
  }
  return "evaluate";
}

namespace {

RequestKind parse_request_kind(std::string_view name) {
  if (name == "evaluate") return RequestKind::kEvaluate;
  if (name == "suggest") return RequestKind::kSuggest;
  if (name == "update") return RequestKind::kUpdate;
  throw ValidationError(fmt::format("unknown request kind '{}'", name));
}

json score_json(const VAScore& s) { return {{"valence", s.valence()}, {"arousal", s.arousal()}}; }

VAScore score_from(const json& j) {
  return VAScore(j.at("valence").get<double>(), j.at("arousal").get<double>());
}

const json* find_attachment(const json& attachments, std::string_view role) {
  for (const auto& a : attachments) {
    if (a.is_object() && a.value("role", "") == role) return &a;
  }
  return nullptr;
}

}  // namespace

json WireRequest::to_json() const {
  return {{"kind", std::string(to_string(kind))},
          {"prompt", prompt},
          {"target", score_json(target)},
          {"attachments", attachments}};
}

WireRequest WireRequest::from_json(const json& j) {
  WireRequest r;
  r.kind = parse_request_kind(j.at("kind").get<std::string>());
  r.prompt = j.at("prompt").get<std::string>();
  r.target = score_from(j.at("target"));
  r.attachments = j.value("attachments", json::array());
  return r;
}

LoggingTransport::LoggingTransport(std::shared_ptr<Transport> inner, std::string log_path)
    : inner_(std::move(inner)), log_path_(std::move(log_path)) {}

std::string LoggingTransport::send(const WireRequest& request) {
  std::string response = inner_->send(request);
  std::lock_guard lock(mutex_);
  ExchangeRecord record{request.to_json(), response};
  if (!log_path_.empty()) {
    std::ofstream out(log_path_, std::ios::app | std::ios::binary);
    out << json{{"seq", records_.size()},
                {"request", record.request},
                {"response", json{{"text", response}}}}
               .dump()
        << '\n';
  }
  records_.push_back(std::move(record));
  return response;
}

std::vector<ExchangeRecord> LoggingTransport::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

std::vector<ExchangeRecord> read_exchange_log(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(fmt::format("cannot read exchange log '{}'", path));
  std::vector<ExchangeRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("request") || !j.contains("response")) {
      throw ValidationError(fmt::format("exchange log '{}': malformed record at line {}", path,
                                        line_no));
    }
    records.push_back({j["request"], j["response"].at("text").get<std::string>()});
  }
  return records;
}

ReplayTransport::ReplayTransport(const std::vector<ExchangeRecord>& records) {
  for (const auto& r : records) responses_[r.request.dump()].push_back(r.response);
}

std::string ReplayTransport::send(const WireRequest& request) {
  std::lock_guard lock(mutex_);
  auto it = responses_.find(request.to_json().dump());
  if (it == responses_.end() || it->second.empty()) {
    throw RemoteError(fmt::format("replay log has no response for this {} request",
                                  to_string(request.kind)));
  }
  std::string response = std::move(it->second.front());
  it->second.pop_front();
  return response;
}

MockTransport::MockTransport(EmotionField field, MockRefinerMode mode, double contraction)
    : field_(std::move(field)), mode_(mode), contraction_(contraction) {
  require(contraction > 0.0 && contraction <= 1.0, "mock contraction must lie in (0, 1]");
}

namespace {

std::string emotion_cue(const VAScore& target) {
  const bool positive = target.valence() >= kScaleMid;
  const bool high = target.arousal() >= kScaleMid;
  if (positive && high) return "vivid saturated colors, bright sunlight, lively motion";
  if (positive) return "soft warm light, calm clear sky, gentle pastel tones";
  if (high) return "harsh contrast, stormy sky, tense dramatic shadows";
  return "muted grey tones, overcast light, still and empty surroundings";
}

std::string direction_word(double delta, std::string_view up, std::string_view down) {
  if (std::abs(delta) < 0.05) return "keep";
  return std::string(delta > 0 ? up : down);
}

}  // namespace

std::string MockTransport::send(const WireRequest& request) {
  switch (request.kind) {
    case RequestKind::kEvaluate: {
      require(!request.attachments.empty(), "mock evaluate: missing sample attachment");
      const auto latent = request.attachments.at(0).at("latent").get<std::vector<double>>();
      const VAScore score = field_evaluate(
          field_, Eigen::Map<const Vec>(latent.data(), static_cast<Eigen::Index>(latent.size())));
      return fmt::format(
          "<think>Projected emotional content reads as valence {:.2f} and arousal {:.2f}."
          "</think><answer>{{\"valence\": {:.2f}, \"arousal\": {:.2f}}}</answer>",
          score.valence(), score.arousal(), score.valence(), score.arousal());
    }
    case RequestKind::kSuggest: {
      const json* best = find_attachment(request.attachments, "best");
      const json* current = find_attachment(request.attachments, "current");
      require(best && current, "mock suggest: missing best/current attachments");
      const VAScore best_score = score_from(*best);
      const double dv = request.target.valence() - best_score.valence();
      const double da = request.target.arousal() - best_score.arousal();
      const std::string analysis = fmt::format(
          "The best sample sits at valence {:.2f}, arousal {:.2f}. To reach the target, "
          "{} valence and {} arousal.",
          best_score.valence(), best_score.arousal(), direction_word(dv, "raise", "lower"),
          direction_word(da, "raise", "lower"));
      return json{{"analysis", analysis}, {"optimized_prompt", current->at("text")}}.dump();
    }
    case RequestKind::kUpdate: {
      const json* current = find_attachment(request.attachments, "current");
      require(current != nullptr, "mock update: missing current prompt attachment");
      const std::string text = current->at("text").get<std::string>();
      if (mode_ == MockRefinerMode::kIdentity) {
        return json{{"analysis", "no change"}, {"optimized_prompt", text}}.dump();
      }
      const VAScore from = score_from(*current);
      const VAScore to = clamp_va(
          from.valence() + contraction_ * (request.target.valence() - from.valence()),
          from.arousal() + contraction_ * (request.target.arousal() - from.arousal()));
      const auto anchor_values = current->at("anchor").get<std::vector<double>>();
      const Vec anchor =
          Eigen::Map<const Vec>(anchor_values.data(), static_cast<Eigen::Index>(anchor_values.size()));
      const Vec moved = anchor + contraction_ * (field_preimage(field_, request.target) - anchor);
      const std::string cue = emotion_cue(request.target);
      const std::string optimized =
          text.find(cue) == std::string::npos ? text + ", " + cue : text;
      return json{{"analysis", "move the condition toward the target"},
                  {"optimized_prompt", optimized},
                  {"condition", score_json(to)},
                  {"anchor", std::vector<double>(moved.begin(), moved.end())}}
          .dump();
    }
  }
  throw ValidationError("mock transport: unknown request kind");
}

HttpChatTransport::HttpChatTransport(std::string base_url, std::string model,
                                     double timeout_seconds)
    : base_url_(std::move(base_url)), model_(std::move(model)), timeout_seconds_(timeout_seconds) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

HttpChatTransport HttpChatTransport::from_environment() {
  const char* url = std::getenv("EMOFEED_LVLM_URL");
  const char* model = std::getenv("EMOFEED_LVLM_MODEL");
  if (!url || !*url || !model || !*model) {
    throw RemoteError("remote backend needs EMOFEED_LVLM_URL and EMOFEED_LVLM_MODEL");
  }
  return HttpChatTransport(url, model);
}

namespace {

constexpr const char* kEvaluatorSystemPrompt =
    "You assess the emotion conveyed by images. Think through your reasoning first, then "
    "answer. Put the reasoning inside <think> </think> and the answer inside "
    "<answer> </answer>.";

constexpr const char* kRefinerSystemPrompt =
    "You are an expert in image emotion. Valence measures how positive (9) or negative (1) "
    "an image feels; arousal measures how stimulating (9) or calm (1) it is. You receive a "
    "generation prompt with target valence and arousal values together with evaluated "
    "samples, and you answer with raw JSON only.";

}  // namespace

std::string HttpChatTransport::send(const WireRequest& request) {
  std::string user = request.prompt;
  if (!request.attachments.empty()) {
    user += "\nAttachments: " + request.attachments.dump();
  }
  const json body = {
      {"model", model_},
      {"messages",
       json::array({{{"role", "system"},
                     {"content", request.kind == RequestKind::kEvaluate ? kEvaluatorSystemPrompt
                                                                         : kRefinerSystemPrompt}},
                    {{"role", "user"}, {"content", user}}})},
  };
  httplib::Client client(base_url_);
  const auto secs = static_cast<time_t>(timeout_seconds_);
  client.set_connection_timeout(secs);
  client.set_read_timeout(secs);
  auto res = client.Post("/v1/chat/completions", body.dump(), "application/json");
  if (!res) {
    throw RemoteError(fmt::format("remote backend {} unreachable: {}", base_url_,
                                  httplib::to_string(res.error())));
  }
  if (res->status != 200) {
    throw RemoteError(fmt::format("remote backend returned HTTP {}", res->status));
  }
  auto reply = json::parse(res->body, nullptr, false);
  if (reply.is_discarded() || !reply.contains("choices") || reply["choices"].empty()) {
    throw RemoteError("remote backend reply has no choices");
  }
  const auto& message = reply["choices"][0].value("message", json::object());
  if (!message.contains("content") || !message["content"].is_string()) {
    throw RemoteError("remote backend reply has no message content");
  }
  return message["content"].get<std::string>();
}

WireEvaluator::WireEvaluator(std::shared_ptr<Transport> transport)
    : transport_(std::move(transport)) {}

SampleEvaluation WireEvaluator::evaluate(const Sample& sample, const VAScore& target) {
  WireRequest request;
  request.kind = RequestKind::kEvaluate;
  request.prompt = build_loss_request(target, sample.id);
  request.target = target;
  request.attachments = json::array({sample.descriptor()});
  SampleEvaluation out;
  out.transcript = parse_transcript(transport_->send(request));
  out.score = answer_va(out.transcript);
  return out;
}

WireRefiner::WireRefiner(std::shared_ptr<Transport> transport, int retries)
    : transport_(std::move(transport)), retries_(retries) {}

Refinement WireRefiner::exchange(const WireRequest& request) {
  for (int attempt = 0;; ++attempt) {
    try {
      return parse_refinement(transport_->send(request));
    } catch (const ValidationError&) {
      if (attempt >= retries_) throw;
    } catch (const RemoteError&) {
      if (attempt >= retries_) throw;
    }
  }
}

namespace {

json current_attachment(const Prompt& prompt) {
  const Vec& anchor = prompt.condition.anchor;
  return {{"role", "current"},
          {"text", prompt.text},
          {"valence", prompt.condition.target.valence()},
          {"arousal", prompt.condition.target.arousal()},
          {"anchor", std::vector<double>(anchor.begin(), anchor.end())}};
}

json summary_attachment(std::string_view role, const SampleSummary& s) {
  return {{"role", role},
          {"id", s.id},
          {"valence", s.score.valence()},
          {"arousal", s.score.arousal()},
          {"loss", s.loss}};
}

}  // namespace

std::string WireRefiner::suggest(const SampleSummary& best, const SampleSummary& worst,
                                 const VAScore& target, const Prompt& prompt, bool degenerate) {
  WireRequest request;
  request.kind = RequestKind::kSuggest;
  request.prompt = build_grad_request(best, worst, target, prompt.text, degenerate);
  request.target = target;
  request.attachments = json::array({summary_attachment("best", best),
                                     summary_attachment("worst", worst),
                                     current_attachment(prompt)});
  return exchange(request).analysis;
}

Prompt WireRefiner::update(const std::string& analysis, const Prompt& prompt,
                           const VAScore& target) {
  WireRequest request;
  request.kind = RequestKind::kUpdate;
  request.prompt = build_update_request(analysis, prompt.text, target);
  request.target = target;
  request.attachments = json::array({current_attachment(prompt)});
  const Refinement refined = exchange(request);
  Prompt next = prompt;
  next.text = refined.optimized_prompt;
  if (refined.condition) next.condition.target = *refined.condition;
  if (refined.anchor) {
    require(refined.anchor->size() == prompt.condition.anchor.size(),
            "refinement anchor has the wrong dimension");
    next.condition.anchor = *refined.anchor;
  }
  return next;
}

std::vector<Sample> ToyGenerator::generate(const Prompt& prompt, int count, int round,
                                           std::uint64_t seed) const {
  std::vector<Sample> samples;
  samples.reserve(count);
  const std::uint64_t round_seed = mix_seed(seed, static_cast<std::uint64_t>(round));
  for (int i = 0; i < count; ++i) {
    Rng rng(mix_seed(round_seed, static_cast<std::uint64_t>(i)));
    samples.push_back({fmt::format("r{}-s{}", round, i),
                       sample_trajectory(policy_, prompt.condition, policy_.timesteps(), rng)
                           .final_sample()});
  }
  return samples;
}

namespace {

std::vector<SampleEvaluation> evaluate_group(EvaluatorClient& evaluator,
                                             const std::vector<Sample>& samples,
                                             const VAScore& target, int max_in_flight) {
  std::vector<SampleEvaluation> out(samples.size());
  for (std::size_t begin = 0; begin < samples.size();
       begin += static_cast<std::size_t>(max_in_flight)) {
    const std::size_t end = std::min(samples.size(), begin + max_in_flight);
    if (max_in_flight == 1) {
      out[begin] = evaluator.evaluate(samples[begin], target);
      continue;
    }
    std::vector<std::future<SampleEvaluation>> wave;
    for (std::size_t i = begin; i < end; ++i) {
      wave.push_back(std::async(std::launch::async, [&, i] {
        return evaluator.evaluate(samples[i], target);
      }));
    }
    for (std::size_t i = begin; i < end; ++i) out[i] = wave[i - begin].get();
  }
  return out;
}

json scores_json(const std::vector<VAScore>& scores) {
  json arr = json::array();
  for (const auto& s : scores) arr.push_back(score_json(s));
  return arr;
}

}  // namespace

json FeedbackState::to_json() const {
  json history_json = json::array();
  for (const auto& r : history) {
    history_json.push_back({{"iteration", r.iteration},
                            {"prompt", r.prompt},
                            {"condition", score_json(r.condition)},
                            {"scores", scores_json(r.scores)},
                            {"malformed", r.malformed},
                            {"losses", r.losses},
                            {"best_index", r.best_index},
                            {"worst_index", r.worst_index},
                            {"degenerate", r.degenerate},
                            {"analysis", r.analysis},
                            {"optimized_prompt", r.optimized_prompt},
                            {"refine_failed", r.refine_failed},
                            {"failure", r.failure}});
  }
  return {{"iteration", iteration},
          {"current_prompt", current_prompt.text},
          {"current_condition", score_json(current_prompt.condition.target)},
          {"anchor", std::vector<double>(current_prompt.condition.anchor.begin(),
                                         current_prompt.condition.anchor.end())},
          {"target", score_json(target)},
          {"generation_rounds", generation_rounds},
          {"early_stopped", early_stopped},
          {"aborted", aborted},
          {"error", error},
          {"history", history_json}};
}

FeedbackResult run_feedback_loop(const Generator& generator, EvaluatorClient& evaluator,
                                 RefinerClient& refiner, const Prompt& initial_prompt,
                                 const VAScore& target, const FeedbackConfig& config,
                                 std::uint64_t seed) {
  config.validate();
  FeedbackResult result;
  FeedbackState& state = result.state;
  state.target = target;
  state.current_prompt = initial_prompt;

  std::vector<Sample> samples =
      generator.generate(state.current_prompt, config.group_size, 0, seed);
  state.generation_rounds = 1;

  std::optional<Sample> overall_best;
  double overall_best_loss = 0.0;
  auto score_group = [&](IterationRecord& record) {
    const auto evals = evaluate_group(evaluator, samples, target, config.max_in_flight);
    for (const auto& e : evals) {
      record.malformed.push_back(!e.score.has_value());
      record.scores.push_back(e.score.value_or(VAScore()));
      record.losses.push_back(e.score ? compute_loss(target, *e.score, config.loss_metric)
                                      : malformed_loss(config.loss_metric));
    }
    const auto pick = select_best_worst(record.losses);
    record.best_index = pick.best;
    record.worst_index = pick.worst;
    record.degenerate = pick.degenerate;
    if (!overall_best || record.losses[pick.best] < overall_best_loss) {
      overall_best = samples[pick.best];
      overall_best_loss = record.losses[pick.best];
    }
  };
  auto summary = [&](const IterationRecord& record, int index) {
    return SampleSummary{samples[index].id, record.scores[index], record.losses[index]};
  };

  for (int i = 0; i < config.max_iterations; ++i) {
    IterationRecord record;
    record.iteration = i;
    record.prompt = state.current_prompt.text;
    record.condition = state.current_prompt.condition.target;
    try {
      score_group(record);
    } catch (const RemoteError& e) {
      state.aborted = true;
      state.error = e.what();
      result.final_samples = samples;
      return result;
    }

    if (config.stop_on_zero_loss && record.losses[record.best_index] == 0.0) {
      state.early_stopped = true;
      result.final_scores = record.scores;
      result.final_losses = record.losses;
      state.history.push_back(std::move(record));
      break;
    }

    Prompt next = state.current_prompt;
    try {
      record.analysis = refiner.suggest(summary(record, record.best_index),
                                        summary(record, record.worst_index), target,
                                        state.current_prompt, record.degenerate);
      next = refiner.update(record.analysis, state.current_prompt, target);
      record.optimized_prompt = next.text;
    } catch (const ValidationError& e) {
      record.refine_failed = true;
      record.failure = e.what();
      record.optimized_prompt = state.current_prompt.text;
      next = state.current_prompt;
    } catch (const RemoteError& e) {
      record.refine_failed = true;
      record.failure = e.what();
      state.history.push_back(std::move(record));
      state.aborted = true;
      state.error = e.what();
      result.final_samples = samples;
      return result;
    }
    state.history.push_back(std::move(record));
    state.current_prompt = next;
    state.iteration = i + 1;
    samples = generator.generate(state.current_prompt, config.group_size, i + 1, seed);
    ++state.generation_rounds;
  }

  result.final_samples = samples;
  if (!state.early_stopped) {
    IterationRecord final_record;
    try {
      score_group(final_record);
    } catch (const RemoteError& e) {
      state.aborted = true;
      state.error = e.what();
      return result;
    }
    result.final_scores = final_record.scores;
    result.final_losses = final_record.losses;
  }
  const auto pick = select_best_worst(result.final_losses);
  if (config.final_selection == FinalSelection::kBestOverall && overall_best &&
      overall_best_loss < result.final_losses[pick.best]) {
    result.selected = *overall_best;
    result.selected_loss = overall_best_loss;
    result.selected_index = -1;
  } else {
    result.selected_index = pick.best;
    result.selected = samples[pick.best];
    result.selected_loss = result.final_losses[pick.best];
  }
  return result;
}

}  // namespace emofeed

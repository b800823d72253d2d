#pragma once

#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "emofeed/reward.hpp"
#include "emofeed/toy_generator.hpp"

namespace emofeed {

enum class LossMetric { kL1, kSquared };
enum class FinalSelection { kBestOfLast, kBestOverall };

struct FeedbackConfig {
  int max_iterations = 3;
  int group_size = 8;
  LossMetric loss_metric = LossMetric::kL1;
  bool stop_on_zero_loss = true;
  int max_in_flight = 4;
  /// Extra attempts after a failed refiner exchange.
  int refine_retries = 2;
  FinalSelection final_selection = FinalSelection::kBestOfLast;

  void validate() const;
};

/// |dV| + |dA| (or dV^2 + dA^2 with LossMetric::kSquared).
double compute_loss(const VAScore& target, const VAScore& evaluated,
                    LossMetric metric = LossMetric::kL1);

/// Loss charged to a sample whose evaluation came back malformed.
double malformed_loss(LossMetric metric);

struct BestWorst {
  int best = 0;
  int worst = 0;
  bool degenerate = false;  ///< all losses equal
};

/// argmin / argmax, ties to the lowest index.
BestWorst select_best_worst(std::span<const double> losses);

/// What the generator is conditioned on. Remote refiners edit the text; the
/// toy mock refiner edits the condition.
struct Prompt {
  std::string text;
  ConditionEmbedding condition;
};

/// A generated sample and the opaque descriptor sent to evaluators.
struct Sample {
  std::string id;
  Vec latent;

  nlohmann::json descriptor() const;
};

struct SampleSummary {
  std::string id;
  VAScore score;
  double loss = 0.0;
};

std::string build_loss_request(const VAScore& target, const std::string& sample_context);
std::string build_grad_request(const SampleSummary& best, const SampleSummary& worst,
                               const VAScore& target, const std::string& current_prompt,
                               bool degenerate);
std::string build_update_request(const std::string& analysis, const std::string& current_prompt,
                                 const VAScore& target);

struct Refinement {
  std::string analysis;
  std::string optimized_prompt;
  /// Present when the refiner also moved the toy condition.
  std::optional<VAScore> condition;
  std::optional<Vec> anchor;
};

/// Decodes the two-key JSON answer. Throws ValidationError when it is not an
/// object, a key is missing or not a string, or optimized_prompt is empty.
Refinement parse_refinement(const std::string& raw);

// ---------------------------------------------------------------------------
// Wire protocol

enum class RequestKind { kEvaluate, kSuggest, kUpdate };

std::string_view to_string(RequestKind kind);

struct WireRequest {
  RequestKind kind = RequestKind::kEvaluate;
  std::string prompt;
  VAScore target;
  nlohmann::json attachments = nlohmann::json::array();

  nlohmann::json to_json() const;
  static WireRequest from_json(const nlohmann::json& j);
};

/// Carries one request to a backend and returns the raw response text.
/// Implementations must be safe to call from several threads.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::string send(const WireRequest& request) = 0;
};

/// One logged exchange.
struct ExchangeRecord {
  nlohmann::json request;
  std::string response;
};

/// Records every exchange of an inner transport, and optionally appends each
/// one as a JSON line to a file.
class LoggingTransport : public Transport {
 public:
  explicit LoggingTransport(std::shared_ptr<Transport> inner, std::string log_path = {});
  std::string send(const WireRequest& request) override;
  std::vector<ExchangeRecord> records() const;

 private:
  std::shared_ptr<Transport> inner_;
  std::string log_path_;
  mutable std::mutex mutex_;
  std::vector<ExchangeRecord> records_;
};

std::vector<ExchangeRecord> read_exchange_log(const std::string& path);

/// Answers requests from a recorded log, matched by exact request content.
class ReplayTransport : public Transport {
 public:
  explicit ReplayTransport(const std::vector<ExchangeRecord>& records);
  std::string send(const WireRequest& request) override;

 private:
  std::mutex mutex_;
  std::map<std::string, std::deque<std::string>> responses_;
};

enum class MockRefinerMode {
  kIdentity,     ///< returns the current prompt unchanged
  /// Moves the condition (V-A code and anchor) a fixed fraction of the way
  /// toward the target and its field preimage.
  kContraction,
};

/// In-process backend: evaluates latents with the emotion field and refines
/// with a scripted rule.
class MockTransport : public Transport {
 public:
  MockTransport(EmotionField field, MockRefinerMode mode, double contraction = 0.3);
  std::string send(const WireRequest& request) override;

 private:
  EmotionField field_;
  MockRefinerMode mode_;
  double contraction_;
};

/// Chat-completions style HTTP backend. The request prompt (plus any
/// attachments) is sent as the user message; the first choice's content is
/// the response text.
class HttpChatTransport : public Transport {
 public:
  HttpChatTransport(std::string base_url, std::string model, double timeout_seconds = 120.0);
  /// Reads EMOFEED_LVLM_URL and EMOFEED_LVLM_MODEL. Throws RemoteError when
  /// either is unset.
  static HttpChatTransport from_environment();
  std::string send(const WireRequest& request) override;

 private:
  std::string base_url_;
  std::string model_;
  double timeout_seconds_;
};

// ---------------------------------------------------------------------------
// Clients

struct SampleEvaluation {
  std::optional<VAScore> score;
  Transcript transcript;
};

class EvaluatorClient {
 public:
  virtual ~EvaluatorClient() = default;
  virtual SampleEvaluation evaluate(const Sample& sample, const VAScore& target) = 0;
};

class RefinerClient {
 public:
  virtual ~RefinerClient() = default;
  virtual std::string suggest(const SampleSummary& best, const SampleSummary& worst,
                              const VAScore& target, const Prompt& prompt, bool degenerate) = 0;
  virtual Prompt update(const std::string& analysis, const Prompt& prompt,
                        const VAScore& target) = 0;
};

class WireEvaluator : public EvaluatorClient {
 public:
  explicit WireEvaluator(std::shared_ptr<Transport> transport);
  SampleEvaluation evaluate(const Sample& sample, const VAScore& target) override;

 private:
  std::shared_ptr<Transport> transport_;
};

/// Refiner over a transport. Malformed answers are retried `retries` times
/// before ValidationError is raised; RemoteError from the transport is
/// retried the same way and then rethrown.
class WireRefiner : public RefinerClient {
 public:
  WireRefiner(std::shared_ptr<Transport> transport, int retries = 2);
  std::string suggest(const SampleSummary& best, const SampleSummary& worst,
                      const VAScore& target, const Prompt& prompt, bool degenerate) override;
  Prompt update(const std::string& analysis, const Prompt& prompt,
                const VAScore& target) override;

 private:
  Refinement exchange(const WireRequest& request);

  std::shared_ptr<Transport> transport_;
  int retries_;
};

// ---------------------------------------------------------------------------
// Loop

/// Generation backend with frozen parameters.
class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::vector<Sample> generate(const Prompt& prompt, int count, int round,
                                       std::uint64_t seed) const = 0;
};

class ToyGenerator : public Generator {
 public:
  explicit ToyGenerator(MlpPolicy policy) : policy_(std::move(policy)) {}
  std::vector<Sample> generate(const Prompt& prompt, int count, int round,
                               std::uint64_t seed) const override;
  const MlpPolicy& policy() const { return policy_; }

 private:
  MlpPolicy policy_;
};

struct IterationRecord {
  int iteration = 0;
  std::string prompt;  ///< prompt the group was generated from
  VAScore condition;   ///< condition target the group was generated from
  std::vector<VAScore> scores;
  std::vector<bool> malformed;
  std::vector<double> losses;
  int best_index = 0;
  int worst_index = 0;
  bool degenerate = false;
  std::string analysis;
  std::string optimized_prompt;
  bool refine_failed = false;
  std::string failure;
};

struct FeedbackState {
  int iteration = 0;
  Prompt current_prompt;
  VAScore target;
  std::vector<IterationRecord> history;
  int generation_rounds = 0;
  bool early_stopped = false;
  bool aborted = false;
  std::string error;

  nlohmann::json to_json() const;
};

struct FeedbackResult {
  std::vector<Sample> final_samples;
  std::vector<VAScore> final_scores;
  std::vector<double> final_losses;
  /// Index into final_samples, or -1 when the deliverable came from an
  /// earlier round (FinalSelection::kBestOverall).
  int selected_index = -1;
  Sample selected;
  double selected_loss = 0.0;
  FeedbackState state;
};

FeedbackResult run_feedback_loop(const Generator& generator, EvaluatorClient& evaluator,
                                 RefinerClient& refiner, const Prompt& initial_prompt,
                                 const VAScore& target, const FeedbackConfig& config,
                                 std::uint64_t seed);

}  // namespace emofeed

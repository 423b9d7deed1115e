#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mgan/errors.hpp"

namespace mgan {

class Generator;
struct EditBasis;

constexpr int kStudySchemaVersion = 1;

enum class Provenance { real, synthesized, edited };
std::string to_string(Provenance p);
Provenance parse_provenance(const std::string& s);
inline bool is_generated(Provenance p) { return p != Provenance::real; }

struct StudyItem {
  std::string id;
  Provenance provenance = Provenance::real;
  std::string path;
};

struct Composition {
  int real = 0;
  int synthesized = 0;
  int edited = 0;
  int total() const { return real + synthesized + edited; }
};

struct StudyDataset {
  std::vector<StudyItem> items;
  std::uint64_t seed = 0;
  double psi = 0.65;
  double edit_probability = 0.35;
  int generated_pool = 0;

  Composition composition() const;
  std::map<std::string, Provenance> truth() const;
};

/// Slot-level draw: which pool each slot takes from and which pool entry.
struct CompositionSlot {
  bool generated = false;
  int pool_index = 0;
  bool edited = false;
};

struct CompositionPlan {
  std::vector<CompositionSlot> slots;
  /// Edit flag of every generated-pool entry.
  std::vector<bool> pool_edited;
  Composition composition() const;
};

/// Flags each generated-pool entry as edited with probability edit_probability,
/// then fills n slots by a fair coin between the real and generated pools,
/// drawing without replacement.
CompositionPlan plan_composition(int n, double edit_probability, int real_pool_size, int generated_pool_size,
                                 std::uint64_t seed);

struct CompositionOptions {
  int n = 100;
  double edit_probability = 0.35;
  double psi = 0.65;
  int generated_pool = 1024;
  /// Global edits pick one of the leading components at +-U(1,2) sigma.
  int edit_components = 6;
};

/// Renders the generated items into out_dir/generated and references real
/// items by path.
StudyDataset compose_dataset(const Generator& g, const EditBasis& basis, const std::vector<StudyItem>& real_pool,
                             const CompositionOptions& opts, std::uint64_t seed, const std::filesystem::path& out_dir);

/// [lo, hi] holding the central 95% of Binomial(n, p).
std::pair<int, int> binomial_band(int n, double p, double level = 0.95);

struct CompositionCheck {
  bool ok = false;
  std::pair<int, int> real_band;
  std::pair<int, int> edited_band;
};

/// Real count against a fair coin and edited count against edit_probability of the generated items.
CompositionCheck validate_composition(const Composition& c, double edit_probability);

// ---- binary task ----

enum class Verdict { real, generated };
std::string to_string(Verdict v);
Verdict parse_verdict(const std::string& s);

struct BinaryAnswer {
  std::string item_id;
  Verdict verdict = Verdict::real;
  /// Confidence that the image is generated.
  std::optional<double> confidence;
  double elapsed_ms = 0;
};

struct BinaryAnswerLog {
  std::string rater;
  std::vector<BinaryAnswer> answers;
};

struct BinaryScore {
  double auc = 0.5;
  std::optional<double> precision;
  int tp = 0, fp = 0, tn = 0, fn = 0;
};

/// Mann-Whitney AUC of the generated-confidence over (generated, real) pairs,
/// ties credited one half. Hard verdicts map to {0,1} unless use_confidence.
BinaryScore score_binary(const BinaryAnswerLog& log, const std::map<std::string, Provenance>& truth,
                         bool use_confidence = false);

/// Serves every dataset item once, in a seeded order, and records verdicts.
class BinarySession {
 public:
  BinarySession(const StudyDataset& dataset, std::string rater, std::uint64_t seed);

  /// Item awaiting a verdict; repeated calls return the same item.
  const StudyItem& next();
  void answer(const std::string& item_id, Verdict verdict, std::optional<double> confidence = std::nullopt,
              std::optional<double> elapsed_ms = std::nullopt);

  bool finished() const { return pos_ >= order_.size(); }
  std::size_t answered() const { return pos_; }
  std::size_t size() const { return order_.size(); }
  const BinaryAnswerLog& log() const { return log_; }

 private:
  std::vector<StudyItem> order_;
  std::size_t pos_ = 0;
  bool served_ = false;
  std::chrono::steady_clock::time_point served_at_;
  BinaryAnswerLog log_;
};

double mann_whitney_auc(const std::vector<double>& positives, const std::vector<double>& negatives);

// ---- discrimination task ----

struct DiscriminationRound {
  int index = 0;
  std::vector<std::string> items;  // six ids, shuffled
  std::string chosen;
  bool correct = false;
  double elapsed_ms = 0;
};

struct DiscriminationLog {
  std::string rater;
  std::vector<DiscriminationRound> rounds;
  int stopped_after = 0;
  int wrong = 0;
  /// Times the real pool was refilled from already-shown items.
  int real_recycles = 0;
  bool finished = false;
  std::string stop_reason;
};

class DiscriminationSession {
 public:
  static constexpr int kRealPerRound = 5;
  static constexpr int kMaxWrong = 3;

  DiscriminationSession(const StudyDataset& dataset, std::string rater, std::uint64_t seed);
  /// Lightweight form used by simulations: ids only.
  DiscriminationSession(std::vector<std::string> real_ids, std::vector<std::string> generated_ids, std::string rater,
                        std::uint64_t seed);

  /// Current round; serving again before an answer returns the same round.
  const DiscriminationRound& next();
  /// Records the pick for the pending round and returns whether it was the generated image.
  bool answer(const std::string& chosen, std::optional<double> elapsed_ms = std::nullopt);

  bool finished() const { return log_.finished; }
  bool has_pending() const { return pending_; }
  const DiscriminationLog& log() const { return log_; }

 private:
  void finish(const std::string& reason);

  std::vector<std::string> real_, generated_;
  std::vector<std::string> real_order_, generated_order_;
  std::size_t real_pos_ = 0, generated_pos_ = 0;
  std::uint64_t seed_;
  std::set<std::string> generated_set_;
  std::string pending_answer_;
  bool pending_ = false;
  DiscriminationRound current_;
  std::chrono::steady_clock::time_point served_at_;
  DiscriminationLog log_;
  int shuffles_ = 0;
};

using DiscriminationOracle = std::function<std::string(const DiscriminationRound&)>;
DiscriminationLog run_discrimination(DiscriminationSession& session, const DiscriminationOracle& oracle);

// ---- report ----

struct RaterRow {
  std::string rater;
  std::optional<double> auc;
  std::optional<double> precision;
  std::optional<double> time_per_round_s;
  std::optional<int> total_rounds;
};

struct StudyReport {
  std::vector<RaterRow> rows;
  std::optional<double> avg_auc, avg_precision, avg_time_per_round_s, avg_rounds;
};

StudyReport summarize(const std::vector<BinaryAnswerLog>& binary, const std::vector<DiscriminationLog>& discrimination,
                      const std::map<std::string, Provenance>& truth);
/// Builds the report from rows alone (averages over the present values).
StudyReport summarize_rows(std::vector<RaterRow> rows);
std::string format_report(const StudyReport& report);

// ---- serialization ----

nlohmann::json to_json(const StudyDataset& d);
StudyDataset study_dataset_from_json(const nlohmann::json& j);
/// Rater-facing view of an item: no provenance, no path.
nlohmann::json blinded(const StudyItem& item);
nlohmann::json to_json(const BinaryAnswerLog& log);
BinaryAnswerLog binary_log_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DiscriminationLog& log);
DiscriminationLog discrimination_log_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StudyReport& r);

/// JSON-lines with a leading {"schema_version": N, "kind": ...} header line.
void write_jsonl(const std::filesystem::path& path, const std::string& kind, const std::vector<nlohmann::json>& records);
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path, const std::string& kind);

}  // namespace mgan

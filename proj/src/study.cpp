#include "mgan/study.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "mgan/generator.hpp"
#include "mgan/global_edit.hpp"
#include "mgan/hash.hpp"
#include "mgan/image_io.hpp"
#include "mgan/rng.hpp"

namespace mgan {

using nlohmann::json;

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::real: return "real";
    case Provenance::synthesized: return "synthesized";
    case Provenance::edited: return "edited";
  }
  return "?";
}

Provenance parse_provenance(const std::string& s) {
  if (s == "real") return Provenance::real;
  if (s == "synthesized") return Provenance::synthesized;
  if (s == "edited") return Provenance::edited;
  throw FormatError("unknown provenance '" + s + "'");
}

std::string to_string(Verdict v) { return v == Verdict::real ? "real" : "generated"; }

Verdict parse_verdict(const std::string& s) {
  if (s == "real") return Verdict::real;
  if (s == "generated") return Verdict::generated;
  throw ProtocolError("verdict must be 'real' or 'generated', got '" + s + "'");
}

Composition StudyDataset::composition() const {
  Composition c;
  for (const auto& it : items) {
    if (it.provenance == Provenance::real) ++c.real;
    else if (it.provenance == Provenance::synthesized) ++c.synthesized;
    else ++c.edited;
  }
  return c;
}

std::map<std::string, Provenance> StudyDataset::truth() const {
  std::map<std::string, Provenance> t;
  for (const auto& it : items) t[it.id] = it.provenance;
  return t;
}

Composition CompositionPlan::composition() const {
  Composition c;
  for (const auto& s : slots) {
    if (!s.generated) ++c.real;
    else if (s.edited) ++c.edited;
    else ++c.synthesized;
  }
  return c;
}

CompositionPlan plan_composition(int n, double edit_probability, int real_pool_size, int generated_pool_size,
                                 std::uint64_t seed) {
  if (n < 2) throw ConfigError("a study dataset needs at least two items");
  if (!(edit_probability >= 0 && edit_probability <= 1)) throw ConfigError("edit_probability must lie in [0,1]");
  if (generated_pool_size <= n) throw ConfigError("the generated pool must be larger than the dataset");
  CompositionPlan plan;
  Rng edit_rng(derive_seed(seed, "edit-flags"));
  for (int i = 0; i < generated_pool_size; ++i) plan.pool_edited.push_back(uniform01(edit_rng) < edit_probability);

  std::vector<int> real_order(static_cast<std::size_t>(real_pool_size)), gen_order(static_cast<std::size_t>(generated_pool_size));
  std::iota(real_order.begin(), real_order.end(), 0);
  std::iota(gen_order.begin(), gen_order.end(), 0);
  Rng order_rng(derive_seed(seed, "pool-order"));
  shuffle_in_place(real_order, order_rng);
  shuffle_in_place(gen_order, order_rng);

  Rng coin(derive_seed(seed, "slot-coin"));
  std::size_t ri = 0, gi = 0;
  for (int s = 0; s < n; ++s) {
    CompositionSlot slot;
    slot.generated = uniform01(coin) < 0.5;
    if (slot.generated) {
      if (gi >= gen_order.size()) throw CompositionError("generated pool exhausted at slot " + std::to_string(s));
      slot.pool_index = gen_order[gi++];
      slot.edited = plan.pool_edited[static_cast<std::size_t>(slot.pool_index)];
    } else {
      if (ri >= real_order.size())
        throw CompositionError("real pool of " + std::to_string(real_pool_size) + " exhausted at slot " + std::to_string(s));
      slot.pool_index = real_order[ri++];
    }
    plan.slots.push_back(slot);
  }
  return plan;
}

StudyDataset compose_dataset(const Generator& g, const EditBasis& basis, const std::vector<StudyItem>& real_pool,
                             const CompositionOptions& opts, std::uint64_t seed, const std::filesystem::path& out_dir) {
  const CompositionPlan plan = plan_composition(opts.n, opts.edit_probability, static_cast<int>(real_pool.size()),
                                                opts.generated_pool, seed);
  std::filesystem::create_directories(out_dir / "generated");
  StudyDataset ds;
  ds.seed = seed;
  ds.psi = opts.psi;
  ds.edit_probability = opts.edit_probability;
  ds.generated_pool = opts.generated_pool;
  const int L = g.config().num_blocks();
  std::set<std::string> seen;
  for (const auto& slot : plan.slots) {
    if (!slot.generated) {
      ds.items.push_back(real_pool[static_cast<std::size_t>(slot.pool_index)]);
      ds.items.back().provenance = Provenance::real;
    } else {
      const auto idx = static_cast<std::uint64_t>(slot.pool_index);
      const LatentRecord rec = make_latent_record(g, derive_seed(seed, "study-sample", idx), opts.psi);
      Tensor img;
      if (slot.edited) {
        Rng er(derive_seed(seed, "study-edit", idx));
        const auto k = static_cast<int>(uniform_index(er, static_cast<std::uint64_t>(std::min(opts.edit_components, basis.size()))));
        const double sign = uniform01(er) < 0.5 ? -1.0 : 1.0;
        const double mag = 1.0 + uniform01(er);
        const GlobalEdit edit{{{k, sign * mag}}, LayerRange::all(L), true};
        img = g.synthesize(apply_edit(rec, basis, edit, L), rec.noise_seed);
      } else {
        img = render(g, rec);
      }
      const std::vector<unsigned char> png = encode_png(img);
      StudyItem item;
      item.id = sha256_hex(png).substr(0, 16);
      item.provenance = slot.edited ? Provenance::edited : Provenance::synthesized;
      item.path = (out_dir / "generated" / (item.id + ".png")).string();
      std::ofstream(item.path, std::ios::binary).write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
      ds.items.push_back(item);
    }
    if (!seen.insert(ds.items.back().id).second) throw CompositionError("duplicate study item " + ds.items.back().id);
  }
  return ds;
}

std::pair<int, int> binomial_band(int n, double p, double level) {
  const double tail = (1.0 - level) / 2.0;
  std::vector<double> pmf(static_cast<std::size_t>(n) + 1);
  for (int k = 0; k <= n; ++k)
    pmf[static_cast<std::size_t>(k)] =
        std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) +
                 (k > 0 ? k * std::log(p) : 0.0) + (n - k > 0 ? (n - k) * std::log1p(-p) : 0.0));
  int lo = 0, hi = n;
  double acc = 0;
  for (int k = 0; k <= n; ++k) {
    acc += pmf[static_cast<std::size_t>(k)];
    if (acc >= tail) {
      lo = k;
      break;
    }
  }
  acc = 0;
  for (int k = n; k >= 0; --k) {
    acc += pmf[static_cast<std::size_t>(k)];
    if (acc >= tail) {
      hi = k;
      break;
    }
  }
  return {lo, hi};
}

CompositionCheck validate_composition(const Composition& c, double edit_probability) {
  CompositionCheck out;
  const int generated = c.synthesized + c.edited;
  out.real_band = binomial_band(c.total(), 0.5);
  out.edited_band = binomial_band(generated, edit_probability);
  out.ok = c.real >= out.real_band.first && c.real <= out.real_band.second && c.edited >= out.edited_band.first &&
           c.edited <= out.edited_band.second;
  return out;
}

double mann_whitney_auc(const std::vector<double>& positives, const std::vector<double>& negatives) {
  if (positives.empty() || negatives.empty()) throw ConfigError("AUC needs both positive and negative items");
  std::vector<std::pair<double, int>> all;
  for (double v : positives) all.emplace_back(v, 1);
  for (double v : negatives) all.emplace_back(v, 0);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;  // average 1-based rank
    for (std::size_t t = i; t < j; ++t)
      if (all[t].second) rank_sum += mid;
    i = j;
  }
  const double np = static_cast<double>(positives.size()), nn = static_cast<double>(negatives.size());
  return (rank_sum - np * (np + 1) / 2.0) / (np * nn);
}

BinaryScore score_binary(const BinaryAnswerLog& log, const std::map<std::string, Provenance>& truth, bool use_confidence) {
  std::set<std::string> answered;
  std::vector<double> pos, neg;
  BinaryScore s;
  for (const auto& a : log.answers) {
    const auto it = truth.find(a.item_id);
    if (it == truth.end()) throw ProtocolError("answer for unknown item " + a.item_id);
    if (!answered.insert(a.item_id).second) throw ProtocolError("item " + a.item_id + " answered twice");
    double score = a.verdict == Verdict::generated ? 1.0 : 0.0;
    if (use_confidence) {
      if (!a.confidence || *a.confidence < 0 || *a.confidence > 1)
        throw ProtocolError("item " + a.item_id + " lacks a confidence in [0,1]");
      score = *a.confidence;
    }
    const bool gen = is_generated(it->second);
    (gen ? pos : neg).push_back(score);
    if (a.verdict == Verdict::generated) (gen ? s.tp : s.fp)++;
    else (gen ? s.fn : s.tn)++;
  }
  if (answered.size() != truth.size())
    throw ProtocolError("log of " + log.rater + " answers " + std::to_string(answered.size()) + " of " +
                        std::to_string(truth.size()) + " items");
  s.auc = mann_whitney_auc(pos, neg);
  if (s.tp + s.fp > 0) s.precision = static_cast<double>(s.tp) / (s.tp + s.fp);
  return s;
}

BinarySession::BinarySession(const StudyDataset& dataset, std::string rater, std::uint64_t seed) : order_(dataset.items) {
  if (order_.empty()) throw ConfigError("binary session needs a non-empty dataset");
  Rng rng(derive_seed(seed, "binary-order"));
  shuffle_in_place(order_, rng);
  log_.rater = std::move(rater);
}

const StudyItem& BinarySession::next() {
  if (finished()) throw StateError("binary session of " + log_.rater + " has finished");
  if (!served_) {
    served_ = true;
    served_at_ = std::chrono::steady_clock::now();
  }
  return order_[pos_];
}

void BinarySession::answer(const std::string& item_id, Verdict verdict, std::optional<double> confidence,
                           std::optional<double> elapsed_ms) {
  if (finished()) throw StateError("binary session of " + log_.rater + " has finished");
  if (!served_ || order_[pos_].id != item_id) throw ProtocolError("item " + item_id + " is not the item being served");
  if (confidence && !(*confidence >= 0 && *confidence <= 1)) throw ProtocolError("confidence must lie in [0,1]");
  const double ms = elapsed_ms ? *elapsed_ms
                               : std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - served_at_).count();
  log_.answers.push_back({item_id, verdict, confidence, ms});
  ++pos_;
  served_ = false;
}

DiscriminationSession::DiscriminationSession(const StudyDataset& dataset, std::string rater, std::uint64_t seed)
    : DiscriminationSession(
          [&] {
            std::vector<std::string> r;
            for (const auto& it : dataset.items)
              if (!is_generated(it.provenance)) r.push_back(it.id);
            return r;
          }(),
          [&] {
            std::vector<std::string> gen;
            for (const auto& it : dataset.items)
              if (is_generated(it.provenance)) gen.push_back(it.id);
            return gen;
          }(),
          std::move(rater), seed) {}

DiscriminationSession::DiscriminationSession(std::vector<std::string> real_ids, std::vector<std::string> generated_ids,
                                             std::string rater, std::uint64_t seed)
    : real_(std::move(real_ids)), generated_(std::move(generated_ids)), seed_(seed) {
  if (static_cast<int>(real_.size()) < kRealPerRound || generated_.empty())
    throw ConfigError("discrimination needs at least 5 real and 1 generated item");
  log_.rater = std::move(rater);
  generated_set_.insert(generated_.begin(), generated_.end());
  real_order_ = real_;
  generated_order_ = generated_;
  Rng rng(derive_seed(seed_, "disc-order"));
  shuffle_in_place(real_order_, rng);
  shuffle_in_place(generated_order_, rng);
}

const DiscriminationRound& DiscriminationSession::next() {
  if (log_.finished) throw StateError("discrimination session of " + log_.rater + " has finished (" + log_.stop_reason + ")");
  if (pending_) return current_;
  if (real_pos_ + kRealPerRound > real_order_.size()) {
    // Real pool depleted: reshuffle everything and start over, noting the reuse.
    Rng rng(derive_seed(seed_, "disc-recycle", static_cast<std::uint64_t>(++shuffles_)));
    real_order_ = real_;
    shuffle_in_place(real_order_, rng);
    real_pos_ = 0;
    ++log_.real_recycles;
  }
  current_ = DiscriminationRound{};
  current_.index = static_cast<int>(log_.rounds.size());
  for (int i = 0; i < kRealPerRound; ++i) current_.items.push_back(real_order_[real_pos_++]);
  pending_answer_ = generated_order_[generated_pos_++];
  current_.items.push_back(pending_answer_);
  Rng rng(derive_seed(seed_, "disc-round", static_cast<std::uint64_t>(current_.index)));
  shuffle_in_place(current_.items, rng);
  pending_ = true;
  served_at_ = std::chrono::steady_clock::now();
  return current_;
}

bool DiscriminationSession::answer(const std::string& chosen, std::optional<double> elapsed_ms) {
  if (log_.finished) throw StateError("discrimination session of " + log_.rater + " has finished");
  if (!pending_) throw ProtocolError("no round has been served");
  if (std::find(current_.items.begin(), current_.items.end(), chosen) == current_.items.end())
    throw ProtocolError("item " + chosen + " was not served in round " + std::to_string(current_.index));
  current_.chosen = chosen;
  current_.correct = chosen == pending_answer_;
  current_.elapsed_ms = elapsed_ms ? *elapsed_ms
                                   : std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - served_at_).count();
  log_.rounds.push_back(current_);
  pending_ = false;
  log_.stopped_after = static_cast<int>(log_.rounds.size());
  if (!current_.correct) ++log_.wrong;
  if (log_.wrong >= kMaxWrong)
    finish("three wrong answers");
  else if (generated_pos_ >= generated_order_.size())
    finish("generated pool exhausted");
  return current_.correct;
}

void DiscriminationSession::finish(const std::string& reason) {
  log_.finished = true;
  log_.stop_reason = reason;
}

DiscriminationLog run_discrimination(DiscriminationSession& session, const DiscriminationOracle& oracle) {
  while (!session.finished()) {
    const DiscriminationRound& round = session.next();
    session.answer(oracle(round), 0.0);
  }
  return session.log();
}

namespace {

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

StudyReport summarize_rows(std::vector<RaterRow> rows) {
  StudyReport r;
  std::vector<double> auc, prec, time, rounds;
  for (const auto& row : rows) {
    if (row.auc) auc.push_back(*row.auc);
    if (row.precision) prec.push_back(*row.precision);
    if (row.time_per_round_s) time.push_back(*row.time_per_round_s);
    if (row.total_rounds) rounds.push_back(*row.total_rounds);
  }
  r.rows = std::move(rows);
  r.avg_auc = mean_of(auc);
  r.avg_precision = mean_of(prec);
  r.avg_time_per_round_s = mean_of(time);
  r.avg_rounds = mean_of(rounds);
  return r;
}

StudyReport summarize(const std::vector<BinaryAnswerLog>& binary, const std::vector<DiscriminationLog>& discrimination,
                      const std::map<std::string, Provenance>& truth) {
  std::vector<RaterRow> rows;
  auto row_for = [&](const std::string& rater) -> RaterRow& {
    for (auto& r : rows)
      if (r.rater == rater) return r;
    rows.push_back(RaterRow{rater, {}, {}, {}, {}});
    return rows.back();
  };
  for (const auto& log : binary) {
    const BinaryScore s = score_binary(log, truth);
    RaterRow& r = row_for(log.rater);
    r.auc = s.auc;
    r.precision = s.precision;
  }
  for (const auto& log : discrimination) {
    RaterRow& r = row_for(log.rater);
    std::vector<double> t;
    for (const auto& round : log.rounds) t.push_back(round.elapsed_ms / 1000.0);
    r.time_per_round_s = mean_of(t);
    r.total_rounds = log.stopped_after;
  }
  return summarize_rows(std::move(rows));
}

namespace {

std::string cell(const std::optional<double>& v, int digits) {
  if (!v) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << *v;
  return os.str();
}

std::string avg_rounds_cell(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream os;
  os << std::setprecision(6) << *v;  // 5.75 stays 5.75, integers stay bare
  return os.str();
}

}  // namespace

std::string format_report(const StudyReport& report) {
  std::ostringstream os;
  os << "Binary classification task\n";
  os << std::left << std::setw(12) << "Rater" << std::setw(8) << "AUC" << "Precision\n";
  for (const auto& r : report.rows)
    os << std::setw(12) << r.rater << std::setw(8) << cell(r.auc, 2) << cell(r.precision, 2) << "\n";
  os << std::setw(12) << "Average" << std::setw(8) << cell(report.avg_auc, 2) << cell(report.avg_precision, 2) << "\n\n";
  os << "Discrimination task\n";
  os << std::setw(12) << "Rater" << std::setw(28) << "Time per round (seconds)" << "Total rounds\n";
  for (const auto& r : report.rows)
    os << std::setw(12) << r.rater << std::setw(28) << cell(r.time_per_round_s, 1)
       << (r.total_rounds ? std::to_string(*r.total_rounds) : std::string("n/a")) << "\n";
  os << std::setw(12) << "Average" << std::setw(28) << cell(report.avg_time_per_round_s, 1)
     << avg_rounds_cell(report.avg_rounds) << "\n";
  return os.str();
}

json to_json(const StudyDataset& d) {
  json items = json::array();
  for (const auto& it : d.items) items.push_back({{"id", it.id}, {"provenance", to_string(it.provenance)}, {"path", it.path}});
  const Composition c = d.composition();
  return {{"schema_version", kStudySchemaVersion},
          {"seed", d.seed},
          {"psi", d.psi},
          {"edit_probability", d.edit_probability},
          {"generated_pool", d.generated_pool},
          {"composition", {{"real", c.real}, {"synthesized", c.synthesized}, {"edited", c.edited}}},
          {"items", items}};
}

StudyDataset study_dataset_from_json(const json& j) {
  if (j.value("schema_version", 0) != kStudySchemaVersion) throw FormatError("unsupported study dataset schema");
  StudyDataset d;
  d.seed = j.at("seed").get<std::uint64_t>();
  d.psi = j.at("psi").get<double>();
  d.edit_probability = j.at("edit_probability").get<double>();
  d.generated_pool = j.value("generated_pool", 0);
  for (const auto& it : j.at("items"))
    d.items.push_back({it.at("id").get<std::string>(), parse_provenance(it.at("provenance").get<std::string>()),
                       it.value("path", std::string())});
  return d;
}

json blinded(const StudyItem& item) { return {{"id", item.id}, {"image_url", "/api/study/image/" + item.id}}; }

json to_json(const BinaryAnswerLog& log) {
  json answers = json::array();
  for (const auto& a : log.answers) {
    json e{{"item_id", a.item_id}, {"verdict", to_string(a.verdict)}, {"elapsed_ms", a.elapsed_ms}};
    e["confidence"] = a.confidence ? json(*a.confidence) : json(nullptr);
    answers.push_back(e);
  }
  return {{"schema_version", kStudySchemaVersion}, {"task", "binary"}, {"rater", log.rater}, {"answers", answers}};
}

BinaryAnswerLog binary_log_from_json(const json& j) {
  if (j.value("task", "") != "binary") throw FormatError("not a binary answer log");
  BinaryAnswerLog log;
  log.rater = j.at("rater").get<std::string>();
  for (const auto& a : j.at("answers")) {
    BinaryAnswer b;
    b.item_id = a.at("item_id").get<std::string>();
    b.verdict = parse_verdict(a.at("verdict").get<std::string>());
    if (a.contains("confidence") && !a["confidence"].is_null()) b.confidence = a["confidence"].get<double>();
    b.elapsed_ms = a.value("elapsed_ms", 0.0);
    log.answers.push_back(b);
  }
  return log;
}

json to_json(const DiscriminationLog& log) {
  json rounds = json::array();
  for (const auto& r : log.rounds)
    rounds.push_back({{"index", r.index}, {"items", r.items}, {"chosen", r.chosen}, {"correct", r.correct}, {"elapsed_ms", r.elapsed_ms}});
  return {{"schema_version", kStudySchemaVersion}, {"task", "discrimination"}, {"rater", log.rater}, {"rounds", rounds},
          {"stopped_after", log.stopped_after}, {"wrong", log.wrong}, {"real_recycles", log.real_recycles},
          {"finished", log.finished}, {"stop_reason", log.stop_reason}};
}

DiscriminationLog discrimination_log_from_json(const json& j) {
  if (j.value("task", "") != "discrimination") throw FormatError("not a discrimination log");
  DiscriminationLog log;
  log.rater = j.at("rater").get<std::string>();
  for (const auto& r : j.at("rounds"))
    log.rounds.push_back({r.at("index").get<int>(), r.at("items").get<std::vector<std::string>>(), r.at("chosen").get<std::string>(),
                          r.at("correct").get<bool>(), r.value("elapsed_ms", 0.0)});
  log.stopped_after = j.value("stopped_after", static_cast<int>(log.rounds.size()));
  log.wrong = j.value("wrong", 0);
  log.real_recycles = j.value("real_recycles", 0);
  log.finished = j.value("finished", false);
  log.stop_reason = j.value("stop_reason", std::string());
  return log;
}

json to_json(const StudyReport& r) {
  auto opt = [](const auto& v) { return v ? json(*v) : json(nullptr); };
  json rows = json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"rater", row.rater}, {"auc", opt(row.auc)}, {"precision", opt(row.precision)},
                    {"mean_time_per_round_s", opt(row.time_per_round_s)}, {"total_rounds", opt(row.total_rounds)}});
  return {{"rows", rows},
          {"averages",
           {{"auc", opt(r.avg_auc)}, {"precision", opt(r.avg_precision)}, {"mean_time_per_round_s", opt(r.avg_time_per_round_s)},
            {"total_rounds", opt(r.avg_rounds)}}}};
}

void write_jsonl(const std::filesystem::path& path, const std::string& kind, const std::vector<json>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw NotFoundError("cannot write " + path.string());
  out << json{{"schema_version", kStudySchemaVersion}, {"kind", kind}}.dump() << "\n";
  for (const auto& r : records) out << r.dump() << "\n";
}

std::vector<json> read_jsonl(const std::filesystem::path& path, const std::string& kind) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + " is empty");
  const json header = json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("schema_version", 0) != kStudySchemaVersion || header.value("kind", "") != kind)
    throw FormatError(path.string() + " is not a '" + kind + "' log of schema " + std::to_string(kStudySchemaVersion));
  std::vector<json> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw FormatError("malformed line in " + path.string());
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace mgan

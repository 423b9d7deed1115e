#include "doctest.h"

#include <cmath>
#include <fstream>
#include <set>

#include "mgan/global_edit.hpp"
#include "mgan/pipeline.hpp"
#include "mgan/study.hpp"
#include "support.hpp"

using namespace mgan;

namespace {

StudyDataset toy_dataset(int real, int generated) {
  StudyDataset d;
  for (int i = 0; i < real; ++i) d.items.push_back({"r" + std::to_string(i), Provenance::real, ""});
  for (int i = 0; i < generated; ++i)
    d.items.push_back({"g" + std::to_string(i), i % 3 == 0 ? Provenance::edited : Provenance::synthesized, ""});
  return d;
}

BinaryAnswerLog answer_all(const StudyDataset& d, const std::function<Verdict(const StudyItem&)>& rule) {
  BinaryAnswerLog log;
  log.rater = "r";
  for (const auto& it : d.items) log.answers.push_back({it.id, rule(it), std::nullopt, 1000});
  return log;
}

std::string generated_in(const DiscriminationRound& round) {
  for (const auto& id : round.items)
    if (id[0] == 'g') return id;
  return {};
}

std::string real_in(const DiscriminationRound& round) {
  for (const auto& id : round.items)
    if (id[0] == 'r') return id;
  return {};
}

}  // namespace

TEST_CASE("composition plan respects edit probability zero") {
  const CompositionPlan p = plan_composition(100, 0.0, 200, 1024, 1);
  CHECK(p.composition().edited == 0);
  CHECK(p.composition().total() == 100);
}

TEST_CASE("edited fraction converges to the edit probability") {
  double edited = 0, generated = 0;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const Composition c = plan_composition(100, 0.35, 200, 1024, seed).composition();
    edited += c.edited;
    generated += c.synthesized + c.edited;
  }
  CHECK(std::abs(edited / generated - 0.35) <= 0.01);
}

TEST_CASE("composition errors") {
  CHECK_THROWS_AS(plan_composition(100, 0.35, 200, 100, 1), ConfigError);
  CHECK_THROWS_AS(plan_composition(100, 0.35, 5, 1024, 1), CompositionError);
}

TEST_CASE("reported composition passes the validator") {
  CHECK(binomial_band(100, 0.5) == std::pair{40, 60});
  const CompositionCheck c = validate_composition({52, 31, 17}, 0.35);
  CHECK(c.ok);
  CHECK_FALSE(validate_composition({75, 20, 5}, 0.35).ok);
  CHECK_FALSE(validate_composition({52, 5, 43}, 0.35).ok);
}

TEST_CASE("binary scoring edge cases") {
  const StudyDataset d = toy_dataset(52, 48);
  const auto truth = d.truth();
  const BinaryScore perfect =
      score_binary(answer_all(d, [](const StudyItem& it) { return is_generated(it.provenance) ? Verdict::generated : Verdict::real; }), truth);
  CHECK(perfect.auc == 1.0);
  CHECK(perfect.precision == 1.0);
  const BinaryScore all_real = score_binary(answer_all(d, [](const StudyItem&) { return Verdict::real; }), truth);
  CHECK(all_real.auc == 0.5);
  CHECK_FALSE(all_real.precision.has_value());
  BinaryAnswerLog dup = answer_all(d, [](const StudyItem&) { return Verdict::real; });
  dup.answers.push_back(dup.answers.front());
  CHECK_THROWS_AS(score_binary(dup, truth), ProtocolError);
  BinaryAnswerLog missing = answer_all(d, [](const StudyItem&) { return Verdict::real; });
  missing.answers.pop_back();
  CHECK_THROWS_AS(score_binary(missing, truth), ProtocolError);
}

TEST_CASE("mann-whitney matches pair counting") {
  Rng rng(5);
  std::vector<double> pos, neg;
  for (int i = 0; i < 40; ++i) pos.push_back(std::floor(uniform01(rng) * 5));
  for (int i = 0; i < 30; ++i) neg.push_back(std::floor(uniform01(rng) * 5));
  double wins = 0;
  for (double p : pos)
    for (double n : neg) wins += p > n ? 1.0 : p == n ? 0.5 : 0.0;
  CHECK(mann_whitney_auc(pos, neg) == doctest::Approx(wins / (40.0 * 30.0)).epsilon(1e-12));
}

TEST_CASE("binary session serves each item once and is idempotent") {
  const StudyDataset d = toy_dataset(6, 4);
  BinarySession s(d, "r", 3);
  std::set<std::string> seen;
  while (!s.finished()) {
    const std::string id = s.next().id;
    CHECK(s.next().id == id);
    CHECK_THROWS_AS(s.answer(id == "r0" ? "r1" : "r0", Verdict::real), ProtocolError);
    s.answer(id, Verdict::generated, 0.7);
    seen.insert(id);
  }
  CHECK(seen.size() == 10);
  CHECK_THROWS_AS(s.next(), StateError);
  CHECK(score_binary(s.log(), d.truth(), true).auc == 0.5);
}

TEST_CASE("discrimination: always-correct oracle runs the pool dry") {
  const StudyDataset d = toy_dataset(30, 12);
  DiscriminationSession s(d, "r", 4);
  const DiscriminationLog log = run_discrimination(s, generated_in);
  CHECK(log.wrong == 0);
  CHECK(log.stopped_after == 12);
  CHECK(log.stop_reason == "generated pool exhausted");
  CHECK(log.real_recycles > 0);
}

TEST_CASE("discrimination: always-wrong oracle stops after three rounds") {
  const StudyDataset d = toy_dataset(30, 12);
  DiscriminationSession s(d, "r", 4);
  const DiscriminationLog log = run_discrimination(s, real_in);
  CHECK(log.rounds.size() == 3);
  CHECK(log.stopped_after == 3);
  CHECK_THROWS_AS(s.next(), StateError);
  CHECK_THROWS_AS(s.answer("r0"), StateError);
}

TEST_CASE("discrimination protocol") {
  const StudyDataset d = toy_dataset(10, 5);
  DiscriminationSession s(d, "r", 4);
  CHECK_THROWS_AS(s.answer("r0"), ProtocolError);
  const DiscriminationRound first = s.next();
  CHECK(first.items.size() == 6);
  CHECK(s.next().items == first.items);
  CHECK_THROWS_AS(s.answer("not-served"), ProtocolError);
  CHECK_THROWS_AS(DiscriminationSession(toy_dataset(4, 5), "r", 1), ConfigError);
}

TEST_CASE("random guessing lasts 3.6 rounds on average") {
  std::vector<std::string> real, gen;
  for (int i = 0; i < 10; ++i) real.push_back("r" + std::to_string(i));
  for (int i = 0; i < 200; ++i) gen.push_back("g" + std::to_string(i));
  const int sessions = 100000;
  double rounds = 0;
  Rng pick(99);
  for (int i = 0; i < sessions; ++i) {
    DiscriminationSession s(real, gen, "sim", static_cast<std::uint64_t>(i));
    rounds += run_discrimination(s, [&](const DiscriminationRound& r) { return r.items[uniform_index(pick, 6)]; }).stopped_after;
  }
  const double closed_form = 3.0 / (5.0 / 6.0);
  CHECK(closed_form == doctest::Approx(3.6));
  CHECK(std::abs(rounds / sessions - closed_form) <= 0.05);
}

TEST_CASE("report averages") {
  std::vector<RaterRow> rows;
  const std::vector<double> t{40.1, 24.6, 24.0, 14.0};
  const std::vector<int> n{3, 14, 3, 3};
  for (int i = 0; i < 4; ++i) rows.push_back({"rater" + std::to_string(i + 1), {}, {}, t[static_cast<std::size_t>(i)], n[static_cast<std::size_t>(i)]});
  const StudyReport r = summarize_rows(rows);
  CHECK(*r.avg_rounds == 5.75);
  CHECK(*r.avg_time_per_round_s == doctest::Approx(25.675).epsilon(1e-12));
  const std::string text = format_report(r);
  CHECK(text.find("25.7") != std::string::npos);
  CHECK(text.find("5.75") != std::string::npos);
  const StudyReport single = summarize_rows({rows[1]});
  CHECK(*single.avg_rounds == 14);
  CHECK(*single.avg_time_per_round_s == 24.6);
}

TEST_CASE("blinded items carry no provenance") {
  const StudyItem it{"abc", Provenance::edited, "/data/generated/abc.png"};
  const nlohmann::json j = blinded(it);
  CHECK(j.size() == 2);
  CHECK(j.contains("id"));
  CHECK(j.contains("image_url"));
  CHECK(j.dump().find("edited") == std::string::npos);
  CHECK(j.dump().find("generated") == std::string::npos);
}

TEST_CASE("logs round-trip through json lines") {
  const auto dir = mgan::testing::scratch_dir("jsonl");
  const StudyDataset d = toy_dataset(10, 5);
  DiscriminationSession s(d, "r", 4);
  const DiscriminationLog log = run_discrimination(s, real_in);
  write_jsonl(dir / "d.jsonl", "discrimination", {to_json(log)});
  const auto back = read_jsonl(dir / "d.jsonl", "discrimination");
  REQUIRE(back.size() == 1);
  CHECK(to_json(discrimination_log_from_json(back[0])) == to_json(log));
  CHECK_THROWS_AS(read_jsonl(dir / "d.jsonl", "binary"), FormatError);
  CHECK(to_json(study_dataset_from_json(to_json(d))) == to_json(d));
}

TEST_CASE("composed dataset has unique ids and the planned composition") {
  const auto dir = mgan::testing::scratch_dir("compose");
  Generator g(generator_config_for(16), 3);
  g.estimate_w_mean(1000, 4);
  const EditBasis basis = fit_basis(g, 500, 8, 5);
  std::vector<StudyItem> real;
  for (int i = 0; i < 40; ++i) real.push_back({"real" + std::to_string(i), Provenance::real, "real/" + std::to_string(i) + ".png"});
  CompositionOptions o;
  o.n = 30;
  o.generated_pool = 64;
  const StudyDataset ds = compose_dataset(g, basis, real, o, 7, dir);
  std::set<std::string> ids;
  for (const auto& it : ds.items) ids.insert(it.id);
  CHECK(ids.size() == 30);
  const Composition planned = plan_composition(30, o.edit_probability, 40, 64, 7).composition();
  CHECK(ds.composition().real == planned.real);
  CHECK(ds.composition().edited == planned.edited);
  for (const auto& it : ds.items)
    if (is_generated(it.provenance)) CHECK(std::filesystem::exists(it.path));
}

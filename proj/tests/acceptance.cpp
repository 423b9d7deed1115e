// Acceptance run: one PASS/FAIL line per criterion 1-8.
//
// Unit-level properties are re-run from the shared doctest cases; the
// trained-model properties use a desk-scale run that is cached under the
// build directory, keyed by the library bytes and the training config.
#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <regex>
#include <sstream>

#include <unistd.h>

#include "desk_model.hpp"
#include "mgan/image_io.hpp"
#include "mgan/rng.hpp"

namespace fs = std::filesystem;
using namespace mgan;
using nlohmann::json;
using namespace mgan::testing;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// Runs the doctest cases matching `cases` (comma-separated, wildcards allowed).
bool run_cases(const char* cases, Outcome& out) {
  doctest::Context ctx;
  ctx.setOption("test-case", cases);
  ctx.setOption("no-version", true);
  std::ostringstream log;
  ctx.setCout(&log);
  const int failed = ctx.run();
  // A filter that matches nothing must not pass silently.
  std::smatch m;
  const std::string text = log.str();
  if (!std::regex_search(text, m, std::regex(R"(test cases:\s*(\d+))")) || std::stoi(m[1]) == 0) {
    out.require(false, std::string("no cases matched ") + cases);
    return false;
  }
  if (failed != 0) {
    std::cerr << log.str();
    out.require(false, std::string("cases ") + cases);
  }
  return failed == 0;
}

// ---- criteria --------------------------------------------------------------

void criterion1(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  run_cases("finite differences*", o);
  const double secs = seconds_since(t0);
  o.require(secs < 120, "runtime under 2 min");
  o.detail << "every op, layer and the 2-block G+D within 1e-4 at h=1e-5 in " << fixed(secs, 2) << " s";
}

void criterion2(const DeskRun& run, Outcome& o) {
  const Generator& g = run.bundle.generator;
  const double final_acc = run.metrics.empty() ? 1.0 : run.metrics.back().heldout_acc;
  const double div = diversity(sample_grid(g, 64, 0.65, 101).images);
  // Forced-equal outputs, and the weaker collapse where only the noise varies.
  const double collapsed = diversity(std::vector<Tensor>(64, sample_grid(g, 1, 0.65, 101).images[0]));
  const double latent_collapsed = diversity(sample_grid(g, 64, 0.0, 101).images);
  o.require(run.early_acc > 0.95, "early accuracy > 0.95");
  o.require(final_acc <= 0.8, "final accuracy <= 0.8");
  o.require(div > 5 * collapsed, "diversity > 5x forced-equal baseline");
  o.require(div > 5 * latent_collapsed, "diversity > 5x psi=0 baseline");
  o.require(run.cpu_seconds <= 3600, "training within 60 min CPU");
  o.require(!run.metrics.empty() && run.metrics.back().step == desk_config().total_steps(), "run reached 200k images");
  o.detail << "heldout acc " << fixed(run.early_acc, 3) << " (D-only warmup) -> " << fixed(final_acc, 3) << " (step "
           << (run.metrics.empty() ? 0 : run.metrics.back().step) << "); diversity(psi=0.65) " << fixed(div, 3)
           << " vs baselines " << fixed(collapsed, 3) << " (forced equal), " << fixed(latent_collapsed, 3)
           << " (psi=0); training " << fixed(run.cpu_seconds / 60, 1) << " CPU min" << (run.cached ? " (cached)" : "");
}

void criterion3(Outcome& o) {
  const fs::path root = fs::temp_directory_path() / ("mgan-acceptance-determinism-" + std::to_string(::getpid()));
  fs::remove_all(root);
  auto pipeline = [&](const std::string& name) {
    const fs::path d = root / name;
    fs::create_directories(d);
    const std::string cli = MGAN_CLI_PATH;
    const std::string cmd = cli + " corpus build --out " + (d / "corpus").string() + " --n 200 --size 64 --seed 5 > /dev/null && " +
                            cli + " train --corpus " + (d / "corpus").string() + " --out " + (d / "m.ckpt").string() +
                            " --metrics " + (d / "metrics.jsonl").string() +
                            " --steps 100 --metrics-every 10 --heldout-samples 16 --seed 3 > /dev/null && " + cli +
                            " sample --checkpoint " + (d / "m.ckpt").string() + " --out " + (d / "samples").string() +
                            " --n 16 --seed 9 > /dev/null";
    return std::system(cmd.c_str()) == 0;
  };
  const bool ran = pipeline("a") && pipeline("b");
  o.require(ran, "pipeline commands succeed");
  int compared = 0, differing = 0;
  if (ran) {
    for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
      if (!e.is_regular_file() || e.path().filename() == "m.ckpt") continue;
      const fs::path rel = fs::relative(e.path(), root / "a");
      ++compared;
      differing += read_file(e.path()) != read_file(root / "b" / rel);
    }
    const std::string metrics = read_file(root / "a" / "metrics.jsonl");
    o.require(std::count(metrics.begin(), metrics.end(), '\n') == 10, "ten metrics records");
  }
  o.require(compared > 0 && differing == 0, "byte-identical outputs");
  o.detail << compared << " files (corpus PNGs, manifest, metrics log, sample PNGs, latent records) compared, " << differing
           << " differ";
  fs::remove_all(root);
}

void criterion4(const DeskRun& run, Outcome& o) {
  run_cases("rank-one*,known diagonal covariance*,zero edit is the identity,plus and minus sigma cancel", o);
  const Generator& g = run.bundle.generator;
  const EditBasis& b = *run.bundle.basis;
  const int k = b.size();
  const double ortho = (b.components.transpose() * b.components - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff();
  bool ordered = true;
  for (int i = 1; i < k; ++i) ordered = ordered && b.explained_variance[i] <= b.explained_variance[i - 1];
  o.require(ortho <= 1e-6, "V^T V = I within 1e-6");
  o.require(ordered, "variances non-increasing");

  int identical = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const LatentRecord r = make_latent_record(g, 500 + s, 0.65);
    const int L = g.config().num_blocks();
    const GlobalEdit zero{{{static_cast<int>(s % 6), 0.0}}, LayerRange::all(L), true};
    identical += encode_png(g.synthesize(apply_edit(r, b, zero, L), r.noise_seed)) == encode_png(render(g, r));
  }
  o.require(identical == 10, "zero edit byte-identical");

  // Independent seeds for the two sets, so the ratio is a measurement.
  auto total_variance = [&](double psi, std::uint64_t base) {
    Eigen::MatrixXd ws(1000, g.config().dim_w);
    for (int i = 0; i < 1000; ++i) ws.row(i) = make_latent_record(g, base + static_cast<std::uint64_t>(i), psi).w.transpose();
    const Eigen::MatrixXd centered = ws.rowwise() - ws.colwise().mean();
    return centered.squaredNorm() / 999.0;
  };
  const double ratio = total_variance(0.65, 10000) / total_variance(1.0, 20000);
  o.require(std::abs(ratio / 0.4225 - 1) <= 0.05, "variance ratio 0.4225 +- 5%");
  o.detail << k << " components, |V^T V - I| " << std::scientific << std::setprecision(1) << ortho << std::defaultfloat
           << ", ordered; zero edit identical " << identical << "/10; Var(0.65)/Var(1) = " << fixed(ratio, 4)
           << "; synthetic PCA oracle cases pass";
}

// The lesion cluster is the one whose region is brightest on average.
int lesion_cluster(const Generator& g, const ClusterModel& m) {
  const int L = g.config().num_blocks(), S = g.config().resolution();
  const int grid = g.config().block_resolution(m.fit_layer(L));
  std::vector<double> sum(static_cast<std::size_t>(m.k), 0.0), count(static_cast<std::size_t>(m.k), 0.0);
  for (std::uint64_t s = 0; s < 200; ++s) {
    const LatentRecord r = make_latent_record(g, 70000 + s, 0.65);
    ActivationCapture cap;
    cap.block_name = m.layer_name;
    const Tensor img = g.synthesize(LatentW::broadcast(r.w, L), r.noise_seed, &cap);
    const std::vector<int> labels = m.assign(cap.activation);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        const auto c = static_cast<std::size_t>(labels[static_cast<std::size_t>((y * grid / S) * grid + x * grid / S)]);
        sum[c] += img[y * S + x];
        count[c] += 1;
      }
  }
  int best = 0;
  for (int j = 1; j < m.k; ++j)
    if (count[static_cast<std::size_t>(j)] > 0 &&
        sum[static_cast<std::size_t>(j)] / count[static_cast<std::size_t>(j)] >
            sum[static_cast<std::size_t>(best)] / std::max(1.0, count[static_cast<std::size_t>(best)]))
      best = j;
  return best;
}

void criterion5(const DeskRun& run, Outcome& o) {
  run_cases("orthogonal unit vectors*,k-means agrees*,gate endpoints*", o);
  const Generator& g = run.bundle.generator;
  const ClusterModel& m = *run.bundle.clusters;
  bool monotone = true, unit = true;
  for (std::size_t i = 1; i < m.objective.size(); ++i) monotone = monotone && m.objective[i] >= m.objective[i - 1] - 1e-9;
  for (int j = 0; j < m.k; ++j) unit = unit && std::abs(m.centroids.row(j).norm() - 1.0) <= 1e-9;
  o.require(monotone, "objective monotone");
  o.require(unit, "centroids unit-norm");

  const LatentRecord t0 = make_latent_record(g, 31, 0.65), r0 = make_latent_record(g, 32, 0.65);
  LatentRecord r_under_t = r0;
  r_under_t.noise_seed = t0.noise_seed;
  const bool q0 = local_edit(g, m, QueryMatrix::constant(m, 0.0), t0, r0).image == render(g, t0);
  const bool q1 = local_edit(g, m, QueryMatrix::constant(m, 1.0), t0, r0).image == render(g, r_under_t);
  o.require(q0 && q1, "q endpoints bit-identical");

  const int lesion = lesion_cluster(g, m);
  const QueryMatrix q = build_query(m, lesion, 50.0);
  int passed = 0, trials = 0;
  Rng rng(derive_seed(5, "lesion-trials"));
  while (trials < 50) {
    const LatentRecord t = make_latent_record(g, rng(), 0.65), r = make_latent_record(g, rng(), 0.65);
    const LocalEditResult res = local_edit(g, m, q, t, r);
    const Tensor base = render(g, t);
    double in = 0, out = 0, n_in = 0, n_out = 0;
    for (Index i = 0; i < base.size(); ++i) {
      const double d = std::abs(res.image[i] - base[i]);
      if (res.mask[i] > 0.5) {
        in += d;
        n_in += 1;
      } else {
        out += d;
        n_out += 1;
      }
    }
    ++trials;
    if (n_in == 0) continue;  // the cluster is absent from both images: counted as a failed trial
    const double mean_in = in / n_in, mean_out = n_out > 0 ? out / n_out : 0.0;
    passed += mean_in > 0 && mean_in >= 2 * mean_out;
  }
  o.require(passed >= 40, "ratio >= 2 on >= 80% of 50 trials");
  o.detail << "k=" << m.k << " at " << m.layer_name << ", " << m.objective.size()
           << " iterations monotone, centroids unit-norm; q=0/q=1 bit-identical; lesion cluster " << lesion << ": ratio >= 2 on "
           << passed << "/" << trials << " trials";
}

void criterion6(Outcome& o) {
  run_cases("replay*,reported composition passes the validator,edited fraction converges*,report averages", o);
  o.detail << "per-rater AUC within 0.005, averages 0.54/0.55, 25.7 s and 5.75 rounds, 52/31/17 accepted, edited fraction 0.35 +- 0.01";
}

void criterion7(Outcome& o) {
  run_cases("random guessing lasts 3.6 rounds on average", o);
  o.detail << "mean rounds-to-stop within 0.05 of 3/(5/6) = 3.6 over 100000 sessions";
}

void criterion8(Outcome& o) {
  run_cases("resume from a checkpoint replays the uninterrupted run,truncated and corrupted files are rejected,"
            "failed save leaves the previous file intact,save then load*",
            o);
  o.detail << "10 resumed steps match the uninterrupted metrics lines; truncated, flipped, trailing and foreign files rejected; "
              "failed save keeps the old file";
}

}  // namespace

int main() {
  std::cout << std::unitbuf;
  bool all = true;
  auto report = [&](int n, const std::function<void(Outcome&)>& f) {
    Outcome o;
    try {
      f(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    all = all && o.pass;
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail.str() << "\n";
  };
  std::optional<DeskRun> run;
  std::string run_error;
  try {
    run = desk_run();
  } catch (const std::exception& e) {
    run_error = e.what();
  }
  auto trained = [&](void (*f)(const DeskRun&, Outcome&)) {
    return [&, f](Outcome& o) {
      if (!run) throw StateError("desk-scale run failed: " + run_error);
      f(*run, o);
    };
  };
  report(1, criterion1);
  report(2, trained(criterion2));
  report(3, criterion3);
  report(4, trained(criterion4));
  report(5, trained(criterion5));
  report(6, criterion6);
  report(7, criterion7);
  report(8, criterion8);
  return all ? 0 : 1;
}

#pragma once

// The desk-scale 64x64 model shared by the acceptance binary and the
// trained-checkpoint examples. Trained once and cached under the build
// directory, keyed by the library bytes and the training config.

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mgan/hash.hpp"
#include "mgan/pipeline.hpp"

namespace mgan::testing {

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline TrainConfig desk_config() {
  TrainConfig c;  // 200k images at batch 16
  c.seed = 11;
  return c;
}

inline CorpusOptions desk_corpus() {
  CorpusOptions o;
  o.n = 4000;
  o.image_size = 64;
  o.seed = 7;
  return o;
}

struct DeskRun {
  ModelBundle bundle;
  std::vector<MetricsRecord> metrics;
  double early_acc = 0;
  double train_seconds = 0;
  double cpu_seconds = 0;
  bool cached = false;
};

inline DeskRun desk_run() {
  const TrainConfig cfg = desk_config();
  const nlohmann::json key{{"library", sha256_hex(read_file(MGAN_LIBRARY_PATH))}, {"train", cfg}, {"corpus_seed", desk_corpus().seed},
                 {"corpus_n", desk_corpus().n}};
  const std::filesystem::path dir = std::filesystem::path(MGAN_CACHE_DIR);
  std::filesystem::create_directories(dir);
  const std::filesystem::path ckpt = dir / ("desk-" + sha256_hex(key.dump()).substr(0, 16) + ".ckpt");
  const bool cached = std::filesystem::exists(ckpt);
  if (!cached) {
    std::cerr << "training the desk-scale model (cached at " << ckpt << ")\n";
    const CorpusImages images = corpus_images(build_corpus(desk_corpus()));
    ModelBundle b = new_training_bundle(64, cfg);
    {
      Trainer probe(b.generator, *b.discriminator, cfg, images.train, images.test, *b.trainer_state);
      probe.train_discriminator_only(200);
      b.info["early_heldout_acc"] = probe.heldout_accuracy();
    }
    nlohmann::json lines = nlohmann::json::array();
    const auto t0 = std::chrono::steady_clock::now();
    const std::clock_t c0 = std::clock();
    train_bundle(b, images, cfg.total_steps(), [&](const MetricsRecord& r) {
      lines.push_back(to_json(r));
      std::cerr << metrics_line(r) << "\n";
    });
    b.info["train_seconds"] = seconds_since(t0);
    b.info["cpu_seconds"] = static_cast<double>(std::clock() - c0) / CLOCKS_PER_SEC;
    b.info["metrics"] = lines;
    b.basis = fit_basis(b.generator, 10000, default_components(b.generator.config().dim_w), 21);
    b.clusters = fit_clusters(b.generator, ClusterOptions{}, 22);
    save_bundle(ckpt, b);
  }
  DeskRun run{load_bundle(ckpt), {}, 0, 0, 0, cached};
  const nlohmann::json& info = run.bundle.info;
  run.early_acc = info.at("early_heldout_acc").get<double>();
  run.train_seconds = info.at("train_seconds").get<double>();
  run.cpu_seconds = info.at("cpu_seconds").get<double>();
  for (const auto& j : info.at("metrics"))
    run.metrics.push_back({j.at("step").get<std::int64_t>(), j.at("d_loss").get<double>(), j.at("g_loss").get<double>(),
                           j.at("heldout_acc").get<double>(), j.at("diversity").get<double>()});
  return run;
}

}  // namespace mgan::testing

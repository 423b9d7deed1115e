// Command-line front end: corpus generation, training, sampling, fitting the
// edit models, editing, the study workflow and the HTTP service.
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "mgan/hash.hpp"
#include "mgan/image_io.hpp"
#include "mgan/pipeline.hpp"
#include "mgan/studio.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mgan;

namespace {

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? v : fallback;
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw NotFoundError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ServeOptions parse_bind(const std::string& bind) {
  ServeOptions o;
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw ConfigError("bind address must look like host:port");
  o.host = bind.substr(0, colon);
  o.port = std::stoi(bind.substr(colon + 1));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Style-based mammography phantom GAN: training, editing and visual Turing studies"};
  app.require_subcommand(1);

  // corpus
  auto* corpus = app.add_subcommand("corpus", "Phantom corpus generation");
  corpus->require_subcommand(1);
  auto* corpus_build = corpus->add_subcommand("build", "Render a labelled phantom corpus with a train/test split");
  CorpusOptions copt;
  std::string corpus_out;
  corpus_build->add_option("--out", corpus_out, "Output directory")->required();
  corpus_build->add_option("--n", copt.n, "Number of images")->capture_default_str();
  corpus_build->add_option("--size", copt.image_size, "Image side in pixels")->capture_default_str();
  corpus_build->add_option("--seed", copt.seed, "Corpus seed")->capture_default_str();
  corpus_build->add_option("--test-fraction", copt.test_fraction, "Held-out fraction")->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train (or resume) a generator/discriminator pair");
  TrainConfig tcfg;
  std::string train_corpus, train_out, train_resume, train_metrics;
  std::int64_t train_steps = -1;
  train->add_option("--corpus", train_corpus, "Corpus directory")->required();
  train->add_option("--out", train_out, "Checkpoint path")->required();
  train->add_option("--resume", train_resume, "Continue from this checkpoint");
  train->add_option("--metrics", train_metrics, "Metrics log (JSON lines, appended)");
  train->add_option("--images", tcfg.total_images_shown, "Total images shown")->capture_default_str();
  train->add_option("--batch", tcfg.batch_size, "Batch size")->capture_default_str();
  train->add_option("--seed", tcfg.seed, "Training seed")->capture_default_str();
  train->add_option("--lr", tcfg.lr_g, "Learning rate for both networks")->capture_default_str();
  train->add_option("--metrics-every", tcfg.metrics_every, "Steps between metrics records")->capture_default_str();
  train->add_option("--checkpoint-every", tcfg.checkpoint_every, "Steps between checkpoints")->capture_default_str();
  train->add_option("--heldout-samples", tcfg.heldout_samples, "Images per class for held-out accuracy")->capture_default_str();
  train->add_option("--steps", train_steps, "Stop after this many steps (default: run to --images)");
  std::string loss_name = "non_saturating";
  train->add_option("--loss", loss_name, "non_saturating or minimax")->capture_default_str();
  train->add_option("--r1-gamma", tcfg.r1_gamma, "Gradient penalty weight on reals (0 disables)")->capture_default_str();

  // sample
  auto* sample = app.add_subcommand("sample", "Write reproducible samples and their latent records");
  std::string ckpt = env_or("MGAN_CHECKPOINT", "");
  std::string sample_out;
  int sample_n = 16;
  double psi = 0.65;
  std::uint64_t seed = 0;
  sample->add_option("--checkpoint", ckpt, "Checkpoint (or MGAN_CHECKPOINT)");
  sample->add_option("--out", sample_out, "Output directory")->required();
  sample->add_option("--n", sample_n, "Number of samples")->capture_default_str();
  sample->add_option("--psi", psi, "Truncation")->capture_default_str();
  sample->add_option("--seed", seed, "Sampling seed")->capture_default_str();

  // pca
  auto* pca = app.add_subcommand("pca", "Fit the global edit basis and store it in the checkpoint");
  int pca_samples = 10000, pca_components = -1;
  pca->add_option("--checkpoint", ckpt, "Checkpoint (or MGAN_CHECKPOINT)");
  pca->add_option("--samples", pca_samples, "Latent samples")->capture_default_str();
  pca->add_option("--components", pca_components, "Components (default min(100, dim_w))");
  pca->add_option("--seed", seed, "Seed")->capture_default_str();

  // cluster
  auto* cluster = app.add_subcommand("cluster", "Fit the activation cluster model and store it in the checkpoint");
  ClusterOptions clopt;
  cluster->add_option("--checkpoint", ckpt, "Checkpoint (or MGAN_CHECKPOINT)");
  cluster->add_option("--samples", clopt.n_samples, "Images to cluster")->capture_default_str();
  cluster->add_option("--k", clopt.k, "Clusters")->capture_default_str();
  cluster->add_option("--layer", clopt.layer_name, "Synthesis block")->capture_default_str();
  cluster->add_option("--seed", seed, "Seed")->capture_default_str();

  // edit
  auto* edit = app.add_subcommand("edit", "Global and local attribute edits");
  edit->require_subcommand(1);
  auto* edit_global = edit->add_subcommand("global", "Move a sample along a principal direction");
  int component = 0;
  double value = 0;
  std::string layers, edit_out = "edit.png";
  edit_global->add_option("--checkpoint", ckpt, "Checkpoint (or MGAN_CHECKPOINT)");
  edit_global->add_option("--seed", seed, "Sample seed")->capture_default_str();
  edit_global->add_option("--psi", psi, "Truncation")->capture_default_str();
  edit_global->add_option("--component", component, "Component index")->required();
  edit_global->add_option("--value", value, "Coordinate in units of sigma")->required();
  edit_global->add_option("--layers", layers, "Block range A..B (default: all)");
  edit_global->add_option("--out", edit_out, "Output PNG")->capture_default_str();

  auto* edit_local = edit->add_subcommand("local", "Transfer one cluster from a reference sample to a target");
  std::uint64_t target_seed = 0, reference_seed = 1;
  int cluster_id = 0;
  double epsilon = 50;
  std::string mask_out = "mask.png";
  edit_local->add_option("--checkpoint", ckpt, "Checkpoint (or MGAN_CHECKPOINT)");
  edit_local->add_option("--target-seed", target_seed, "Target sample seed")->capture_default_str();
  edit_local->add_option("--reference-seed", reference_seed, "Reference sample seed")->capture_default_str();
  edit_local->add_option("--cluster", cluster_id, "Cluster to transfer")->capture_default_str();
  edit_local->add_option("--epsilon", epsilon, "Gate sharpness")->capture_default_str();
  edit_local->add_option("--psi", psi, "Truncation")->capture_default_str();
  edit_local->add_option("--out", edit_out, "Output PNG")->capture_default_str();
  edit_local->add_option("--mask", mask_out, "Cluster mask PNG")->capture_default_str();

  // study
  auto* study = app.add_subcommand("study", "Visual Turing study");
  study->require_subcommand(1);
  auto* study_compose = study->add_subcommand("compose", "Assemble a blinded real/generated dataset");
  CompositionOptions sopt;
  std::string study_corpus, study_out;
  study_compose->add_option("--checkpoint", ckpt, "Checkpoint (or MGAN_CHECKPOINT)");
  study_compose->add_option("--corpus", study_corpus, "Corpus directory (its test split is the real pool)")->required();
  study_compose->add_option("--out", study_out, "Output directory")->required();
  study_compose->add_option("--n", sopt.n, "Dataset size")->capture_default_str();
  study_compose->add_option("--edit-probability", sopt.edit_probability, "Chance a generated image is edited")->capture_default_str();
  study_compose->add_option("--psi", sopt.psi, "Truncation")->capture_default_str();
  study_compose->add_option("--pool", sopt.generated_pool, "Generated pool size")->capture_default_str();
  study_compose->add_option("--seed", seed, "Seed")->capture_default_str();

  auto* study_score = study->add_subcommand("score", "Score answer logs and print the report");
  std::string dataset_path, binary_logs, disc_logs;
  bool as_json = false;
  study_score->add_option("--dataset", dataset_path, "dataset.json")->required();
  study_score->add_option("--binary", binary_logs, "Binary-task logs (JSON lines)");
  study_score->add_option("--discrimination", disc_logs, "Discrimination logs (JSON lines)");
  study_score->add_flag("--json", as_json, "Emit JSON instead of the table");

  auto* study_serve = study->add_subcommand("serve", "Serve the study endpoints for a dataset");
  std::string bind = env_or("MGAN_BIND", "127.0.0.1:8080");
  study_serve->add_option("--checkpoint", ckpt, "Checkpoint (or MGAN_CHECKPOINT)");
  study_serve->add_option("--dataset", dataset_path, "dataset.json")->required();
  study_serve->add_option("--bind", bind, "host:port (or MGAN_BIND)")->capture_default_str();

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Serve the editing and study API");
  std::string static_dir;
  bool schema_only = false;
  serve_cmd->add_option("--checkpoint", ckpt, "Checkpoint (or MGAN_CHECKPOINT)");
  serve_cmd->add_option("--bind", bind, "host:port (or MGAN_BIND)")->capture_default_str();
  serve_cmd->add_option("--study", dataset_path, "Optional study dataset.json");
  serve_cmd->add_option("--static", static_dir, "UI bundle directory");
  serve_cmd->add_flag("--schema", schema_only, "Print the API schema and exit");

  CLI11_PARSE(app, argc, argv);

  auto need_checkpoint = [&] {
    if (ckpt.empty()) throw ConfigError("no checkpoint given (use --checkpoint or MGAN_CHECKPOINT)");
    return load_bundle(ckpt);
  };

  try {
    if (*corpus_build) {
      const CorpusManifest m = build_corpus(copt, fs::path(corpus_out));
      std::cout << "wrote " << m.train_items.size() << " train and " << m.test_items.size() << " test images to " << corpus_out << "\n";
    } else if (*train) {
      tcfg.lr_d = tcfg.lr_g;
      tcfg.loss_variant = parse_loss_variant(loss_name);
      const CorpusManifest m = load_manifest(train_corpus);
      ModelBundle b = train_resume.empty() ? new_training_bundle(m.image_size, tcfg) : load_bundle(train_resume);
      if (train_resume.empty()) b.info = {{"corpus", fs::absolute(train_corpus).string()}, {"image_size", m.image_size}};
      b.info["created_unix"] = static_cast<std::int64_t>(std::time(nullptr));
      const std::int64_t remaining = b.train_config->total_steps() - b.trainer_state->step;
      const std::int64_t steps = train_steps < 0 ? remaining : std::min(train_steps, remaining);
      std::ofstream metrics;
      if (!train_metrics.empty()) metrics.open(train_metrics, std::ios::app);
      train_bundle(b, corpus_images(m, fs::path(train_corpus)), steps, [&](const MetricsRecord& r) {
        std::cout << metrics_line(r) << std::endl;
        if (metrics) metrics << metrics_line(r) << "\n" << std::flush;
      }, fs::path(train_out));
      save_bundle(train_out, b);
      std::cout << "trained to step " << b.trainer_state->step << ", checkpoint " << b.generator.checkpoint_id() << "\n";
    } else if (*sample) {
      const ModelBundle b = need_checkpoint();
      const SampleGrid grid = sample_grid(b.generator, sample_n, psi, seed);
      if (grid.untrained) std::cerr << "warning: generator has no mean latent; samples are untruncated\n";
      fs::create_directories(sample_out);
      std::ofstream records(fs::path(sample_out) / "records.jsonl");
      for (std::size_t i = 0; i < grid.images.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%04zu.png", i);
        write_png(fs::path(sample_out) / name, grid.images[i]);
        records << to_json(grid.records[i]).dump() << "\n";
      }
      std::cout << "wrote " << grid.images.size() << " samples to " << sample_out << "\n";
    } else if (*pca) {
      ModelBundle b = need_checkpoint();
      const int k = pca_components < 0 ? default_components(b.generator.config().dim_w) : pca_components;
      b.basis = fit_basis(b.generator, pca_samples, k, seed);
      save_bundle(ckpt, b);
      std::cout << "basis with " << k << " components; leading sigma " << b.basis->sigma(0) << "\n";
    } else if (*cluster) {
      ModelBundle b = need_checkpoint();
      b.clusters = fit_clusters(b.generator, clopt, seed);
      if (b.clusters->reseeds > 0) std::cerr << "note: " << b.clusters->reseeds << " empty cluster(s) re-seeded\n";
      save_bundle(ckpt, b);
      std::cout << "clustered " << clopt.n_samples << " images at " << clopt.layer_name << " into " << clopt.k
                << " clusters after " << b.clusters->objective.size() << " iterations\n";
    } else if (*edit_global) {
      const ModelBundle b = need_checkpoint();
      if (!b.basis) throw StateError("checkpoint has no edit basis; run 'mgan pca' first");
      const int L = b.generator.config().num_blocks();
      const LatentRecord rec = make_latent_record(b.generator, seed, psi);
      const GlobalEdit e{{{component, value}}, layers.empty() ? LayerRange::all(L) : LayerRange::parse(layers, L), true};
      write_png(edit_out, b.generator.synthesize(apply_edit(rec, *b.basis, e, L), rec.noise_seed));
      std::cout << "wrote " << edit_out << "\n";
    } else if (*edit_local) {
      const ModelBundle b = need_checkpoint();
      if (!b.clusters) throw StateError("checkpoint has no cluster model; run 'mgan cluster' first");
      const QueryMatrix q = build_query(*b.clusters, cluster_id, epsilon);
      if (!q.warning.empty()) std::cerr << "warning: " << q.warning << "\n";
      const LocalEditResult r = local_edit(b.generator, *b.clusters, q, make_latent_record(b.generator, target_seed, psi),
                                           make_latent_record(b.generator, reference_seed, psi));
      write_png(edit_out, r.image);
      write_png(mask_out, r.mask);
      std::cout << "wrote " << edit_out << " and " << mask_out << "\n";
    } else if (*study_compose) {
      const ModelBundle b = need_checkpoint();
      if (!b.basis) throw StateError("checkpoint has no edit basis; run 'mgan pca' first");
      const CorpusManifest m = load_manifest(study_corpus);
      std::vector<StudyItem> real;
      for (const auto& it : m.test_items) {
        const fs::path p = fs::absolute(fs::path(study_corpus) / it.path);
        real.push_back({sha256_hex(file_bytes(p)).substr(0, 16), Provenance::real, p.string()});
      }
      const StudyDataset ds = compose_dataset(b.generator, *b.basis, real, sopt, seed, study_out);
      write_text(fs::path(study_out) / "dataset.json", to_json(ds).dump(2));
      const Composition c = ds.composition();
      std::cout << "composed " << c.total() << " items: " << c.real << " real, " << c.synthesized << " synthesized, "
                << c.edited << " edited\n";
    } else if (*study_score) {
      const StudyDataset ds = study_dataset_from_json(json::parse(file_bytes(dataset_path)));
      std::vector<BinaryAnswerLog> bl;
      std::vector<DiscriminationLog> dl;
      if (!binary_logs.empty())
        for (const auto& j : read_jsonl(binary_logs, "binary")) bl.push_back(binary_log_from_json(j));
      if (!disc_logs.empty())
        for (const auto& j : read_jsonl(disc_logs, "discrimination")) dl.push_back(discrimination_log_from_json(j));
      const StudyReport rep = summarize(bl, dl, ds.truth());
      std::cout << (as_json ? to_json(rep).dump(2) + "\n" : format_report(rep));
    } else if (*study_serve || *serve_cmd) {
      if (schema_only) {
        std::cout << Studio::schema().dump(2) << "\n";
        return 0;
      }
      StudioOptions so;
      if (!dataset_path.empty()) so.study = study_dataset_from_json(json::parse(file_bytes(dataset_path)));
      so.static_dir = static_dir;
      Studio studio(need_checkpoint(), so);
      const ServeOptions opts = parse_bind(bind);
      std::cout << "serving checkpoint " << studio.bundle().generator.checkpoint_id() << " on " << opts.host << ":" << opts.port
                << std::endl;
      serve(studio, opts);
    }
  } catch (const Error& e) {
    std::cerr << "error (" << e.kind() << "): " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

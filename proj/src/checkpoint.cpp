#include "mgan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "mgan/hash.hpp"

namespace mgan {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'G', 'A', 'N'};
const std::set<std::string> kKnownSections{"generator", "discriminator", "optimizer.g", "optimizer.d", "edit_basis", "clusters"};

template <class T>
void put_raw(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : b_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string take(std::uint64_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > b_.size() - pos_) throw CorruptionError("checkpoint is truncated");
  }
  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace

const Section* CheckpointContainer::find(const std::string& name) const {
  for (const auto& s : sections)
    if (s.name == name) return &s;
  return nullptr;
}

void CheckpointContainer::put(Section s) {
  for (auto& existing : sections)
    if (existing.name == s.name) {
      existing = std::move(s);
      return;
    }
  sections.push_back(std::move(s));
}

std::string sections_digest(const std::vector<Section>& sections) {
  std::string all;
  for (const auto& s : sections) {
    put_raw<std::uint32_t>(all, static_cast<std::uint32_t>(s.name.size()));
    all += s.name;
    put_raw<std::uint64_t>(all, s.payload.size());
    all += s.payload;
  }
  return sha256_hex(all);
}

std::string serialize_container(const CheckpointContainer& c) {
  json meta = c.metadata;
  meta["digest"] = sections_digest(c.sections);
  const std::string m = meta.dump();
  std::string out(kMagic, 4);
  put_raw<std::uint32_t>(out, c.version);
  put_raw<std::uint64_t>(out, m.size());
  out += m;
  put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(c.sections.size()));
  for (const auto& s : c.sections) {
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(s.name.size()));
    out += s.name;
    put_raw<std::uint64_t>(out, s.payload.size());
    out += s.payload;
  }
  return out;
}

CheckpointContainer parse_container(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not an MGAN checkpoint (bad magic)");
  Reader r(bytes);
  r.take(4);
  CheckpointContainer c;
  c.version = r.get<std::uint32_t>();
  if (c.version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(c.version));
  const std::string m = r.take(r.get<std::uint64_t>());
  c.metadata = json::parse(m, nullptr, false);
  if (c.metadata.is_discarded() || !c.metadata.is_object()) throw CorruptionError("checkpoint metadata is not valid JSON");
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    Section s;
    s.name = r.take(r.get<std::uint32_t>());
    s.payload = r.take(r.get<std::uint64_t>());
    c.sections.push_back(std::move(s));
  }
  if (!r.done()) throw CorruptionError("trailing bytes after the last checkpoint section");
  if (c.metadata.value("digest", "") != sections_digest(c.sections)) throw CorruptionError("checkpoint digest mismatch");
  c.metadata.erase("digest");
  return c;
}

void save_container(const std::filesystem::path& path, const CheckpointContainer& c) {
  const std::string bytes = serialize_container(c);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw NotFoundError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw NotFoundError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointContainer load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("checkpoint " + path.string() + " not found");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_container(ss.str());
}

std::string encode_tensors(const NamedTensors& tensors) {
  std::string out;
  put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape().size()));
    for (Index d : t.shape()) put_raw<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (double v : t.values()) put_raw<float>(out, static_cast<float>(v));
  }
  return out;
}

NamedTensors decode_tensors(const std::string& payload) {
  Reader r(payload);
  NamedTensors out;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.take(r.get<std::uint32_t>());
    const auto ndim = r.get<std::uint32_t>();
    if (ndim > 8) throw CorruptionError("tensor " + name + " claims " + std::to_string(ndim) + " dimensions");
    Shape shape;
    std::uint64_t count_values = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto dim = r.get<std::uint64_t>();
      if (dim > (1u << 30)) throw CorruptionError("tensor " + name + " has an implausible dimension");
      shape.push_back(static_cast<Index>(dim));
      count_values *= dim;
    }
    if (count_values > payload.size()) throw CorruptionError("checkpoint is truncated");
    Tensor t(shape);
    for (double& v : t.values()) v = static_cast<double>(r.get<float>());
    out.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw CorruptionError("trailing bytes in tensor section");
  return out;
}

namespace {

template <class Params>
NamedTensors collect(const Params& params) {
  NamedTensors out;
  for (const auto& [name, t] : params) out.emplace_back(name, *t);
  return out;
}

void assign(const ParamRefs& params, const NamedTensors& tensors, const std::string& what) {
  if (params.size() != tensors.size()) throw FormatError(what + " section holds " + std::to_string(tensors.size()) + " tensors, expected " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].first != tensors[i].first || params[i].second->shape() != tensors[i].second.shape())
      throw FormatError(what + " tensor " + tensors[i].first + " does not match " + params[i].first + " " + shape_string(params[i].second->shape()));
    *params[i].second = tensors[i].second;
  }
}

Tensor vec_tensor(const VectorXd& v) {
  Tensor t(Shape{v.size()});
  for (Index i = 0; i < v.size(); ++i) t.storage()[static_cast<std::size_t>(i)] = v[i];
  return t;
}

VectorXd tensor_vec(const Tensor& t) {
  VectorXd v(static_cast<Index>(t.storage().size()));
  for (Index i = 0; i < v.size(); ++i) v[i] = t.storage()[static_cast<std::size_t>(i)];
  return v;
}

Tensor mat_tensor(const Eigen::MatrixXd& m) {
  Tensor t(Shape{m.rows(), m.cols()});
  t.matrix(m.rows(), m.cols()) = m;
  return t;
}

Eigen::MatrixXd tensor_mat(const Tensor& t) {
  if (t.shape().size() != 2) throw FormatError("expected a matrix tensor");
  return t.matrix(t.shape()[0], t.shape()[1]);
}

const Tensor& lookup(const NamedTensors& ts, const std::string& name) {
  for (const auto& [n, t] : ts)
    if (n == name) return t;
  throw FormatError("checkpoint section lacks tensor " + name);
}

Section optimizer_section(const std::string& name, const OptimizerState& s, json& meta) {
  NamedTensors ts;
  for (const auto& [p, m] : s.moments) {
    ts.emplace_back(p + ".m1", m.first);
    ts.emplace_back(p + ".m2", m.second);
  }
  meta[name] = {{"learning_rate", s.learning_rate}, {"beta1", s.beta1}, {"beta2", s.beta2},
                {"epsilon_adam", s.epsilon_adam}, {"step_count", s.step_count}};
  return {name, encode_tensors(ts)};
}

OptimizerState optimizer_from(const Section& sec, const json& meta) {
  OptimizerState s;
  s.learning_rate = meta.at("learning_rate").get<double>();
  s.beta1 = meta.at("beta1").get<double>();
  s.beta2 = meta.at("beta2").get<double>();
  s.epsilon_adam = meta.at("epsilon_adam").get<double>();
  s.step_count = meta.at("step_count").get<std::int64_t>();
  const NamedTensors ts = decode_tensors(sec.payload);
  if (ts.size() % 2) throw FormatError("optimizer section has unpaired moments");
  for (std::size_t i = 0; i < ts.size(); i += 2) {
    const std::string p = ts[i].first.substr(0, ts[i].first.size() - 3);
    s.moments[p] = Moments{ts[i].second, ts[i + 1].second};
  }
  return s;
}

// Modified Gram-Schmidt that keeps column order and sign.
void reorthonormalize(Eigen::MatrixXd& v) {
  for (Index k = 0; k < v.cols(); ++k) {
    for (Index j = 0; j < k; ++j) v.col(k) -= v.col(j).dot(v.col(k)) * v.col(j);
    v.col(k).normalize();
  }
}

}  // namespace

CheckpointContainer to_container(const ModelBundle& b) {
  CheckpointContainer c;
  json& meta = c.metadata;
  const Generator& g = b.generator;
  meta["format"] = "mgan-checkpoint";
  meta["generator_config"] = g.config();
  meta["activation"] = {{"hidden", "leaky_relu"}, {"output", "tanh_to_unit"}};
  meta["w_mean_count"] = g.w_mean_count();
  meta["checkpoint_id"] = g.checkpoint_id();
  meta["info"] = b.info;

  NamedTensors gen = collect(g.parameters());
  if (g.w_mean_count() > 0) gen.emplace_back("w_mean", vec_tensor(g.w_mean()));
  c.put({"generator", encode_tensors(gen)});
  if (b.discriminator) {
    meta["discriminator_config"] = b.discriminator->config();
    c.put({"discriminator", encode_tensors(collect(b.discriminator->parameters()))});
  }
  if (b.train_config) {
    meta["train_config"] = *b.train_config;
    meta["train_config_digest"] = short_id(json(*b.train_config).dump());
  }
  if (b.trainer_state) {
    meta["trainer_step"] = b.trainer_state->step;
    c.put(optimizer_section("optimizer.g", b.trainer_state->opt_g, meta));
    c.put(optimizer_section("optimizer.d", b.trainer_state->opt_d, meta));
  }
  if (b.basis) {
    meta["edit_basis"] = {{"n_samples", b.basis->n_samples}, {"checkpoint_id", b.basis->checkpoint_id}};
    c.put({"edit_basis", encode_tensors({{"components", mat_tensor(b.basis->components)},
                                         {"explained_variance", vec_tensor(b.basis->explained_variance)},
                                         {"mean", vec_tensor(b.basis->mean)}})});
  }
  if (b.clusters) {
    const ClusterModel& m = *b.clusters;
    meta["clusters"] = {{"layer_name", m.layer_name}, {"k", m.k}, {"n_samples", m.n_samples},
                        {"checkpoint_id", m.checkpoint_id}, {"objective", m.objective}, {"reseeds", m.reseeds}};
    NamedTensors ts{{"centroids", mat_tensor(m.centroids)}, {"channel_membership", mat_tensor(m.channel_membership)}};
    for (std::size_t l = 0; l < m.layer_membership.size(); ++l)
      ts.emplace_back("layer_membership." + std::to_string(l), mat_tensor(m.layer_membership[l]));
    c.put({"clusters", encode_tensors(ts)});
  }
  for (const auto& s : b.unknown_sections) c.put(s);
  meta["created_unix"] = b.info.value("created_unix", 0);
  return c;
}

ModelBundle from_container(const CheckpointContainer& c) {
  const json& meta = c.metadata;
  if (meta.value("format", "") != "mgan-checkpoint") throw FormatError("metadata does not describe an MGAN checkpoint");
  const Section* gs = c.find("generator");
  if (!gs) throw FormatError("checkpoint has no generator section");
  ModelBundle b{Generator(meta.at("generator_config").get<GeneratorConfig>()), {}, {}, {}, {}, {}, nlohmann::json::object(), {}};
  b.info = meta.value("info", json::object());

  NamedTensors gen = decode_tensors(gs->payload);
  if (meta.value("w_mean_count", 0) > 0) {
    if (gen.empty() || gen.back().first != "w_mean") throw FormatError("generator section lacks w_mean");
    b.generator.set_w_mean(tensor_vec(gen.back().second), meta.at("w_mean_count").get<std::int64_t>());
    gen.pop_back();
  }
  assign(b.generator.parameters(), gen, "generator");
  if (const Section* ds = c.find("discriminator")) {
    b.discriminator.emplace(meta.at("discriminator_config").get<DiscriminatorConfig>());
    assign(b.discriminator->parameters(), decode_tensors(ds->payload), "discriminator");
  }
  if (meta.contains("train_config")) b.train_config = meta["train_config"].get<TrainConfig>();
  const Section* og = c.find("optimizer.g");
  const Section* od = c.find("optimizer.d");
  if (og && od) {
    TrainerState st;
    st.step = meta.at("trainer_step").get<std::int64_t>();
    st.opt_g = optimizer_from(*og, meta.at("optimizer.g"));
    st.opt_d = optimizer_from(*od, meta.at("optimizer.d"));
    b.trainer_state = std::move(st);
  }
  if (const Section* es = c.find("edit_basis")) {
    const NamedTensors ts = decode_tensors(es->payload);
    EditBasis basis;
    basis.components = tensor_mat(lookup(ts, "components"));
    reorthonormalize(basis.components);
    basis.explained_variance = tensor_vec(lookup(ts, "explained_variance"));
    basis.mean = tensor_vec(lookup(ts, "mean"));
    basis.n_samples = meta.at("edit_basis").at("n_samples").get<int>();
    basis.checkpoint_id = meta.at("edit_basis").at("checkpoint_id").get<std::string>();
    b.basis = std::move(basis);
  }
  if (const Section* cs = c.find("clusters")) {
    const NamedTensors ts = decode_tensors(cs->payload);
    const json& cm = meta.at("clusters");
    ClusterModel m;
    m.layer_name = cm.at("layer_name").get<std::string>();
    m.k = cm.at("k").get<int>();
    m.n_samples = cm.at("n_samples").get<int>();
    m.checkpoint_id = cm.at("checkpoint_id").get<std::string>();
    m.objective = cm.at("objective").get<std::vector<double>>();
    m.reseeds = cm.value("reseeds", 0);
    m.centroids = tensor_mat(lookup(ts, "centroids")).rowwise().normalized();
    m.channel_membership = centroid_membership(tensor_mat(lookup(ts, "channel_membership")));
    for (int l = 0; l < b.generator.config().num_blocks(); ++l)
      m.layer_membership.push_back(centroid_membership(tensor_mat(lookup(ts, "layer_membership." + std::to_string(l)))));
    b.clusters = std::move(m);
  }
  for (const auto& s : c.sections)
    if (!kKnownSections.count(s.name)) b.unknown_sections.push_back(s);
  return b;
}

void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle) { save_container(path, to_container(bundle)); }

ModelBundle load_bundle(const std::filesystem::path& path) { return from_container(load_container(path)); }

}  // namespace mgan

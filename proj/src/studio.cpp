#include "mgan/studio.hpp"

#include <fstream>
#include <sstream>

#include "mgan/hash.hpp"
#include "mgan/image_io.hpp"

namespace mgan {

using nlohmann::json;

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::bad_request: return 400;
    case ErrorCode::not_found: return 404;
    case ErrorCode::state_error: return 409;
    case ErrorCode::provenance_error: return 422;
    case ErrorCode::numeric_error: return 500;
  }
  return 500;
}

ApiResponse error_response(ErrorCode code, const std::string& message, const std::string& detail) {
  ApiResponse r;
  r.status = http_status(code);
  r.body = json{{"error", {{"code", to_string(code)}, {"message", message}, {"detail", detail}}}}.dump();
  return r;
}

namespace {

std::string percent_decode(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size()) {
      out += static_cast<char>(std::stoi(s.substr(i + 1, 2), nullptr, 16));
      i += 2;
    } else {
      out += s[i] == '+' ? ' ' : s[i];
    }
  }
  return out;
}

std::map<std::string, std::string> parse_query(const std::string& q) {
  std::map<std::string, std::string> out;
  std::stringstream ss(q);
  std::string kv;
  while (std::getline(ss, kv, '&')) {
    if (kv.empty()) continue;
    const auto eq = kv.find('=');
    out[percent_decode(kv.substr(0, eq))] = eq == std::string::npos ? "" : percent_decode(kv.substr(eq + 1));
  }
  return out;
}

const std::string& required(const std::map<std::string, std::string>& q, const std::string& key) {
  const auto it = q.find(key);
  if (it == q.end()) throw ProtocolError("missing query parameter '" + key + "'");
  return it->second;
}

template <class T>
T field(const json& j, const std::string& key) {
  if (!j.contains(key)) throw ProtocolError("missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ProtocolError("field '" + key + "' has the wrong type");
  }
}

template <class T>
T field_or(const json& j, const std::string& key, T fallback) {
  return j.contains(key) ? field<T>(j, key) : fallback;
}

ApiResponse ok(const json& j) { return ApiResponse{200, "application/json", j.dump()}; }

ApiResponse png_response(std::string bytes) { return ApiResponse{200, "image/png", std::move(bytes)}; }

std::string png_string(const Tensor& image) {
  const auto v = encode_png(image);
  return std::string(v.begin(), v.end());
}

}  // namespace

Studio::Studio(ModelBundle bundle, StudioOptions options)
    : bundle_(std::move(bundle)), options_(std::move(options)), checkpoint_id_(bundle_.generator.checkpoint_id()) {}

ApiResponse Studio::handle(const std::string& method, const std::string& target, const std::string& body) {
  try {
    const auto qpos = target.find('?');
    const std::string path = target.substr(0, qpos);
    const auto query = parse_query(qpos == std::string::npos ? "" : target.substr(qpos + 1));
    json req = json::object();
    if (method == "POST") {
      req = json::parse(body.empty() ? "{}" : body, nullptr, false);
      if (req.is_discarded() || !req.is_object()) throw ProtocolError("request body must be a JSON object");
    }
    auto route = [&](const char* m, const char* p) { return method == m && path == p; };
    if (route("POST", "/api/sample")) return ok(sample(req));
    if (route("GET", "/api/components")) return ok(components());
    if (route("POST", "/api/edit/global")) return ok(edit_global(req));
    if (route("GET", "/api/clusters")) return ok(clusters(query));
    if (route("POST", "/api/edit/local")) return ok(edit_local(req));
    if (route("POST", "/api/study/session")) return ok(study_session(req));
    if (route("GET", "/api/study/next")) return ok(study_next(query));
    if (route("POST", "/api/study/answer")) return ok(study_answer(req));
    if (route("GET", "/api/study/report")) return ok(study_report(query));
    if (route("GET", "/api/schema")) return ok(schema());
    if (route("GET", "/api/health")) return ok({{"status", "ok"}, {"checkpoint_id", checkpoint_id_}});
    if (method == "GET" && path.rfind("/api/image/", 0) == 0) return image(path.substr(11));
    if (method == "GET" && path.rfind("/api/study/image/", 0) == 0) return study_image(path.substr(17));
    if (method == "GET" && path.rfind("/api/", 0) != 0 && !options_.static_dir.empty()) return static_file(path);
    throw NotFoundError("no route for " + method + " " + path);
  } catch (const Error& e) {
    return error_response(e.code(), e.what(), e.kind());
  } catch (const json::exception& e) {
    return error_response(ErrorCode::bad_request, "malformed JSON field", e.what());
  } catch (const std::exception& e) {
    return error_response(ErrorCode::numeric_error, "internal error", e.what());
  }
}

std::string Studio::store_image(const Tensor& image) {
  if (!all_finite(image.values())) throw NumericError("synthesized image is not finite");
  std::string png = png_string(image);
  std::string id = sha256_hex(png).substr(0, 16);
  std::lock_guard lock(store_mutex_);
  images_.emplace(id, std::move(png));
  return id;
}

std::string Studio::store_latent(Latent l) {
  json chain = json::array();
  for (const auto& e : l.chain) chain.push_back(to_json(e));
  std::string id = short_id(l.record.id() + chain.dump());
  std::lock_guard lock(store_mutex_);
  latents_.emplace(id, std::move(l));
  return id;
}

Studio::Latent Studio::latent(const std::string& id) const {
  std::lock_guard lock(store_mutex_);
  const auto it = latents_.find(id);
  if (it == latents_.end()) throw NotFoundError("unknown latent id " + id);
  return it->second;
}

LatentW Studio::latent_w(const Latent& l) const {
  const int L = bundle_.generator.config().num_blocks();
  LatentW w = LatentW::broadcast(l.record.w, L);
  for (const auto& e : l.chain) w = apply_edit(w, *bundle_.basis, e);
  return w;
}

json Studio::sample(const json& req) {
  const int n = field_or<int>(req, "n", 1);
  const double psi = field_or<double>(req, "psi", 0.65);
  const auto seed = field_or<std::uint64_t>(req, "seed", 0);
  if (n < 1 || n > 256) throw ConfigError("n must lie in [1, 256]");
  if (!std::isfinite(psi)) throw NumericError("psi must be finite");
  const SampleGrid grid = sample_grid(bundle_.generator, n, psi, seed);
  json items = json::array();
  for (std::size_t i = 0; i < grid.images.size(); ++i) {
    const std::string image_id = store_image(grid.images[i]);
    const std::string latent_id = store_latent({grid.records[i], {}});
    items.push_back({{"image_id", image_id}, {"image_url", "/api/image/" + image_id}, {"latent_id", latent_id},
                     {"seed", grid.records[i].seed}});
  }
  return {{"items", items}, {"checkpoint_id", checkpoint_id_}, {"untrained", grid.untrained}};
}

json Studio::components() const {
  if (!bundle_.basis) throw StateError("no edit basis has been fitted for this checkpoint");
  const EditBasis& b = *bundle_.basis;
  std::vector<double> sigma;
  for (int k = 0; k < b.size(); ++k) sigma.push_back(b.sigma(k));
  return {{"count", b.size()}, {"sigma", sigma}, {"n_samples", b.n_samples}, {"checkpoint_id", b.checkpoint_id},
          {"num_layers", bundle_.generator.config().num_blocks()}};
}

json Studio::edit_global(const json& req) {
  if (!bundle_.basis) throw StateError("no edit basis has been fitted for this checkpoint");
  Latent l = latent(field<std::string>(req, "latent_id"));
  if (bundle_.basis->checkpoint_id != l.record.checkpoint_id)
    throw ProvenanceError("latent and edit basis come from different checkpoints");
  const int L = bundle_.generator.config().num_blocks();
  GlobalEdit e;
  e.coordinates = {{field<int>(req, "component"), field<double>(req, "value")}};
  e.sigma_units = field_or<bool>(req, "sigma_units", true);
  e.layers = req.contains("layers") ? LayerRange::parse(field<std::string>(req, "layers"), L) : LayerRange::all(L);
  // Consecutive edits over the same layers merge, so +v then -v cancels exactly.
  if (!l.chain.empty() && l.chain.back().layers.begin == e.layers.begin && l.chain.back().layers.end == e.layers.end &&
      l.chain.back().sigma_units == e.sigma_units)
    l.chain.back() = GlobalEdit::compose(l.chain.back(), e);
  else
    l.chain.push_back(e);
  const Tensor img = bundle_.generator.synthesize(latent_w(l), l.record.noise_seed);
  const std::string image_id = store_image(img);
  json chain = json::array();
  for (const auto& c : l.chain) chain.push_back(to_json(c));
  const std::string latent_id = store_latent(std::move(l));
  return {{"image_id", image_id}, {"image_url", "/api/image/" + image_id}, {"latent_id", latent_id}, {"edit_chain", chain}};
}

json Studio::clusters(const std::map<std::string, std::string>& query) {
  if (!bundle_.clusters) throw StateError("no cluster model has been fitted for this checkpoint");
  json out = cluster_summary(*bundle_.clusters);
  const auto it = query.find("latent_id");
  if (it == query.end()) return out;
  const Latent l = latent(it->second);
  ActivationCapture cap;
  cap.block_name = bundle_.clusters->layer_name;
  bundle_.generator.synthesize(latent_w(l), l.record.noise_seed, &cap);
  const std::vector<int> labels = bundle_.clusters->assign(cap.activation);
  const int grid = bundle_.generator.config().block_resolution(bundle_.clusters->fit_layer(bundle_.generator.config().num_blocks()));
  json masks = json::array();
  for (int j = 0; j < bundle_.clusters->k; ++j) {
    const std::string id = store_image(cluster_mask(labels, grid, j, bundle_.generator.config().resolution()));
    masks.push_back({{"cluster", j}, {"mask_id", id}, {"mask_url", "/api/image/" + id}});
  }
  out["latent_id"] = it->second;
  out["masks"] = masks;
  return out;
}

json Studio::edit_local(const json& req) {
  if (!bundle_.clusters) throw StateError("no cluster model has been fitted for this checkpoint");
  const Latent t = latent(field<std::string>(req, "target_id"));
  const Latent r = latent(field<std::string>(req, "reference_id"));
  if (!t.chain.empty() || !r.chain.empty()) throw StateError("local edits apply to sampled latents without global edits");
  const QueryMatrix q = build_query(*bundle_.clusters, field<int>(req, "cluster"), field_or<double>(req, "epsilon", 50.0));
  const LocalEditResult res = local_edit(bundle_.generator, *bundle_.clusters, q, t.record, r.record);
  const std::string image_id = store_image(res.image);
  const std::string mask_id = store_image(res.mask);
  json out{{"image_id", image_id}, {"image_url", "/api/image/" + image_id}, {"mask_id", mask_id},
           {"mask_url", "/api/image/" + mask_id}};
  if (!q.warning.empty()) out["warning"] = q.warning;
  return out;
}

const StudyDataset& Studio::dataset() const {
  if (!options_.study) throw StateError("the service was started without a study dataset");
  return *options_.study;
}

Studio::StudySession& Studio::session(const std::string& id) {
  std::lock_guard lock(session_mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("unknown study session " + id);
  return *it->second;
}

json Studio::study_session(const json& req) {
  const StudyDataset& ds = dataset();
  const std::string task = field<std::string>(req, "task");
  const std::string rater = field_or<std::string>(req, "rater", "anonymous");
  const auto seed = field_or<std::uint64_t>(req, "seed", 0);
  auto s = std::make_unique<StudySession>();
  s->task = task;
  if (task == "binary")
    s->binary = std::make_unique<BinarySession>(ds, rater, seed);
  else if (task == "discrimination")
    s->discrimination = std::make_unique<DiscriminationSession>(ds, rater, seed);
  else
    throw ProtocolError("task must be 'binary' or 'discrimination'");
  std::lock_guard lock(session_mutex_);
  const std::string id = short_id(task + "/" + rater + "/" + std::to_string(seed) + "/" + std::to_string(session_counter_++));
  sessions_.emplace(id, std::move(s));
  return {{"session_id", id}, {"task", task}, {"n_items", ds.items.size()}};
}

json Studio::study_next(const std::map<std::string, std::string>& query) {
  StudySession& s = session(required(query, "session"));
  std::lock_guard lock(s.mutex);
  const StudyDataset& ds = dataset();
  auto item_of = [&](const std::string& id) {
    for (const auto& it : ds.items)
      if (it.id == id) return blinded(it);
    throw NotFoundError("study item " + id + " missing from the dataset");
  };
  if (s.binary) {
    const StudyItem& item = s.binary->next();
    return {{"task", "binary"}, {"index", s.binary->answered()}, {"remaining", s.binary->size() - s.binary->answered()},
            {"item", blinded(item)}};
  }
  const DiscriminationRound& round = s.discrimination->next();
  json items = json::array();
  for (const auto& id : round.items) items.push_back(item_of(id));
  return {{"task", "discrimination"}, {"round", round.index}, {"items", items}};
}

json Studio::study_answer(const json& req) {
  StudySession& s = session(field<std::string>(req, "session"));
  std::lock_guard lock(s.mutex);
  if (s.binary) {
    std::optional<double> conf;
    if (req.contains("confidence") && !req["confidence"].is_null()) conf = field<double>(req, "confidence");
    s.binary->answer(field<std::string>(req, "item_id"), parse_verdict(field<std::string>(req, "verdict")), conf);
    return {{"finished", s.binary->finished()}, {"answered", s.binary->answered()}};
  }
  s.discrimination->answer(field<std::string>(req, "chosen"));
  const DiscriminationLog& log = s.discrimination->log();
  return {{"finished", log.finished}, {"rounds_played", log.stopped_after}, {"wrong", log.wrong}};
}

json Studio::study_report(const std::map<std::string, std::string>& query) {
  StudySession& s = session(required(query, "session"));
  std::lock_guard lock(s.mutex);
  const auto truth = dataset().truth();
  if (s.binary) {
    const BinaryAnswerLog& log = s.binary->log();
    json out{{"task", "binary"}, {"rater", log.rater}, {"finished", s.binary->finished()}, {"answered", s.binary->answered()}};
    if (s.binary->finished()) {
      const BinaryScore sc = score_binary(log, truth);
      out["auc"] = sc.auc;
      out["precision"] = sc.precision ? json(*sc.precision) : json(nullptr);
    }
    return out;
  }
  const DiscriminationLog& log = s.discrimination->log();
  const StudyReport rep = summarize({}, {log}, truth);
  return {{"task", "discrimination"}, {"rater", log.rater}, {"finished", log.finished}, {"stopped_after", log.stopped_after},
          {"wrong", log.wrong}, {"stop_reason", log.stop_reason}, {"real_recycles", log.real_recycles},
          {"mean_time_per_round_s", rep.avg_time_per_round_s ? json(*rep.avg_time_per_round_s) : json(nullptr)}};
}

ApiResponse Studio::image(const std::string& id) const {
  std::lock_guard lock(store_mutex_);
  const auto it = images_.find(id);
  if (it == images_.end()) throw NotFoundError("unknown image id " + id);
  return png_response(it->second);
}

ApiResponse Studio::study_image(const std::string& id) const {
  for (const auto& it : dataset().items)
    if (it.id == id) {
      std::ifstream in(it.path, std::ios::binary);
      if (!in) throw NotFoundError("image for study item " + id + " is missing on disk");
      std::ostringstream ss;
      ss << in.rdbuf();
      return png_response(ss.str());
    }
  throw NotFoundError("unknown study item " + id);
}

ApiResponse Studio::static_file(const std::string& path) const {
  if (path.find("..") != std::string::npos) throw ProtocolError("path escapes the static root");
  std::filesystem::path p = options_.static_dir / (path == "/" ? "index.html" : path.substr(1));
  std::ifstream in(p, std::ios::binary);
  if (!in) throw NotFoundError("no static file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string ext = p.extension().string();
  const std::string type = ext == ".html" ? "text/html" : ext == ".js" ? "text/javascript" : ext == ".css" ? "text/css"
                           : ext == ".png" ? "image/png" : "application/octet-stream";
  return ApiResponse{200, type, ss.str()};
}

json Studio::schema() {
  auto obj = [](json props, std::vector<std::string> req) {
    return json{{"type", "object"}, {"properties", std::move(props)}, {"required", std::move(req)}};
  };
  const json str{{"type", "string"}}, integer{{"type", "integer"}}, number{{"type", "number"}};
  const json error = obj({{"error", obj({{"code", {{"enum", {"bad_request", "not_found", "state_error", "provenance_error", "numeric_error"}}}},
                                         {"message", str}, {"detail", str}},
                                        {"code", "message"})}},
                         {"error"});
  json paths;
  paths["/api/sample"]["post"] = {{"request", obj({{"n", integer}, {"psi", number}, {"seed", integer}}, {})},
                                  {"response", obj({{"items", {{"type", "array"}}}, {"checkpoint_id", str}}, {"items"})}};
  paths["/api/components"]["get"] = {{"response", obj({{"count", integer}, {"sigma", {{"type", "array"}}}}, {"count", "sigma"})}};
  paths["/api/edit/global"]["post"] = {
      {"request", obj({{"latent_id", str}, {"component", integer}, {"value", number}, {"layers", str}, {"sigma_units", {{"type", "boolean"}}}},
                      {"latent_id", "component", "value"})},
      {"response", obj({{"image_id", str}, {"image_url", str}, {"latent_id", str}}, {"image_id", "latent_id"})}};
  paths["/api/clusters"]["get"] = {{"query", obj({{"latent_id", str}}, {})},
                                   {"response", obj({{"k", integer}, {"clusters", {{"type", "array"}}}, {"masks", {{"type", "array"}}}}, {"k"})}};
  paths["/api/edit/local"]["post"] = {
      {"request", obj({{"target_id", str}, {"reference_id", str}, {"cluster", integer}, {"epsilon", number}},
                      {"target_id", "reference_id", "cluster"})},
      {"response", obj({{"image_id", str}, {"mask_id", str}, {"image_url", str}, {"mask_url", str}}, {"image_id", "mask_id"})}};
  paths["/api/study/session"]["post"] = {{"request", obj({{"task", {{"enum", {"binary", "discrimination"}}}}, {"rater", str}, {"seed", integer}}, {"task"})},
                                         {"response", obj({{"session_id", str}, {"task", str}, {"n_items", integer}}, {"session_id"})}};
  paths["/api/study/next"]["get"] = {{"query", obj({{"session", str}}, {"session"})},
                                     {"response", obj({{"item", obj({{"id", str}, {"image_url", str}}, {"id", "image_url"})},
                                                       {"items", {{"type", "array"}}}, {"round", integer}},
                                                      {})}};
  paths["/api/study/answer"]["post"] = {{"request", obj({{"session", str}, {"item_id", str}, {"verdict", {{"enum", {"real", "generated"}}}},
                                                         {"confidence", number}, {"chosen", str}},
                                                        {"session"})},
                                        {"response", obj({{"finished", {{"type", "boolean"}}}}, {"finished"})}};
  paths["/api/study/report"]["get"] = {{"query", obj({{"session", str}}, {"session"})},
                                       {"response", obj({{"task", str}, {"auc", number}, {"precision", number}, {"stopped_after", integer}}, {"task"})}};
  paths["/api/image/{id}"]["get"] = {{"response", {{"content_type", "image/png"}}}};
  paths["/api/study/image/{id}"]["get"] = {{"response", {{"content_type", "image/png"}}}};
  return {{"title", "mgan studio API"}, {"version", 1}, {"paths", paths}, {"error", error},
          {"status_codes", {{"bad_request", 400}, {"not_found", 404}, {"state_error", 409}, {"provenance_error", 422}, {"numeric_error", 500}}}};
}

}  // namespace mgan

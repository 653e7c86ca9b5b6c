#include "hsmstack/triage_server.hpp"

#include <chrono>
#include <ctime>
#include <mutex>
#include <unordered_map>

#include <httplib.h>
#include <json.hpp>

#include "hsmstack/entropy.hpp"

namespace hsmstack {

namespace {

using nlohmann::ordered_json;

ordered_json prob_array(const ProbVector& p) {
  ordered_json a = ordered_json::array();
  for (double v : p) a.push_back(v);
  return a;
}

ordered_json model_json(const ModelView& m) {
  return {{"prediction", class_name(m.prediction)}, {"entropy", m.entropy}, {"probs", prob_array(m.probs)}};
}

ordered_json item_json(const FlaggedItem& f) {
  ordered_json reasons = ordered_json::array();
  if (f.high_entropy) reasons.push_back("high-entropy");
  if (f.model_disagreement) reasons.push_back("model-disagreement");
  return {{"image_id", f.image_id},
          {"hsm_entropy", f.hsm_entropy},
          {"n_annotations", f.n_annotations},
          {"consensus", class_name(f.consensus)},
          {"reasons", reasons},
          {"models", {{"CXE", model_json(f.cxe)}, {"KLD", model_json(f.kld)}, {"KNN", model_json(f.knn)}}}};
}

Response json_response(int status, const ordered_json& body) { return {status, "application/json", body.dump()}; }

Response error_response(int status, const std::string& message) {
  return json_response(status, ordered_json{{"error", message}});
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::set<std::string> flagged_ids(const std::vector<FlaggedItem>& items) {
  std::set<std::string> ids;
  for (const auto& f : items) ids.insert(f.image_id);
  return ids;
}

}  // namespace

TriageService::TriageService(TriageInputs inputs, TriageThresholds thresholds,
                             std::optional<std::filesystem::path> decision_log)
    : in_(std::move(inputs)),
      thresholds_(thresholds),
      flagged_(flag_items(in_.hsm, in_.cxe, in_.kld, in_.knn, thresholds_)),
      store_(flagged_ids(flagged_), std::move(decision_log)) {}

Response TriageService::flagged(const std::map<std::string, std::string>& query) const {
  TriageThresholds t = thresholds_;
  std::optional<std::string> reason;
  try {
    if (auto it = query.find("min_entropy"); it != query.end() && !it->second.empty()) {
      t.min_entropy = parse_double(it->second, "min_entropy");
    }
    if (auto it = query.find("min_annotations"); it != query.end() && !it->second.empty()) {
      const auto n = parse_int(it->second, "min_annotations");
      if (n < 0) return error_response(422, "min_annotations must be >= 0");
      t.min_annotations = static_cast<std::uint32_t>(n);
    }
  } catch (const DataError& e) {
    return error_response(422, e.what());
  }
  if (auto it = query.find("reason"); it != query.end() && !it->second.empty()) {
    if (it->second != "high-entropy" && it->second != "model-disagreement") {
      return error_response(422, "reason must be high-entropy or model-disagreement");
    }
    reason = it->second;
  }
  const auto items = flag_items(in_.hsm, in_.cxe, in_.kld, in_.knn, t);
  ordered_json list = ordered_json::array();
  std::shared_lock lock(mutex_);
  for (const auto& f : items) {
    if (reason == "high-entropy" && !f.high_entropy) continue;
    if (reason == "model-disagreement" && !f.model_disagreement) continue;
    auto j = item_json(f);
    const auto d = store_.current().find(f.image_id);
    j["decision"] = d == store_.current().end() ? ordered_json(nullptr)
                                                : ordered_json::parse(decision_to_json_line(d->second));
    list.push_back(std::move(j));
  }
  return json_response(200, ordered_json{{"count", list.size()}, {"items", list}});
}

Response TriageService::image(const std::string& image_id) const {
  const auto rec = std::find_if(in_.hsm.begin(), in_.hsm.end(),
                                [&](const HsmRecord& r) { return r.image_id == image_id; });
  if (rec == in_.hsm.end()) return error_response(404, "unknown image " + image_id);
  ordered_json j;
  j["image_id"] = image_id;
  j["consensus"] = class_name(rec->consensus);
  j["n_annotations"] = rec->n_annotations;
  j["hsm"] = prob_array(rec->hsm);
  j["hsm_entropy"] = shannon_entropy(rec->hsm);
  ordered_json models = ordered_json::object();
  for (const auto* preds : {&in_.cxe, &in_.kld, &in_.knn}) {
    for (const auto& p : *preds) {
      if (p.image_id != image_id) continue;
      models[std::string(model_tag_name(p.model))] = {{"prediction", class_name(argmax_class(p.probs))},
                                                        {"entropy", shannon_entropy(p.probs)},
                                                        {"probs", prob_array(p.probs)}};
    }
  }
  j["models"] = models;
  const auto img = std::find_if(in_.images.begin(), in_.images.end(),
                                [&](const GlyphImage& g) { return g.image_id == image_id; });
  if (img != in_.images.end()) {
    j["height"] = img->height;
    j["width"] = img->width;
    j["pixels"] = img->pixels;
  }
  return json_response(200, j);
}

Response TriageService::decision(const std::string& body) {
  DecisionRecord d;
  try {
    d = decision_from_json(body);
  } catch (const DecisionError& e) {
    return error_response(422, e.what());
  }
  if (d.timestamp.empty()) d.timestamp = utc_now();
  std::unique_lock lock(mutex_);
  try {
    const auto ack = store_.record(d);
    return json_response(200, ordered_json{{"ok", true}, {"appended", ack.appended}, {"log_size", ack.log_size}});
  } catch (const DecisionError& e) {
    return error_response(e.kind() == DecisionError::Kind::kUnknownImage ? 404 : 422, e.what());
  }
}

Response TriageService::export_labels() const {
  std::shared_lock lock(mutex_);
  return {200, "text/csv", export_clean(in_.hsm, store_.current())};
}

struct TriageHttpServer::Impl {
  httplib::Server server;
  ServeOptions options;
};

TriageHttpServer::TriageHttpServer(TriageService& service, const ServeOptions& options)
    : impl_(std::make_unique<Impl>()) {
  impl_->options = options;
  auto& server = impl_->server;
  auto send = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server.Get("/api/flagged", [&service, send](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query[k] = v;
    send(res, service.flagged(query));
  });
  server.Get(R"(/api/image/([^/]+))", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.image(req.matches[1]));
  });
  server.Post("/api/decision", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.decision(req.body));
  });
  server.Get("/api/export", [&service, send](const httplib::Request&, httplib::Response& res) {
    send(res, service.export_labels());
  });
  if (options.static_dir) server.set_mount_point("/", options.static_dir->string());
}

TriageHttpServer::~TriageHttpServer() = default;

int TriageHttpServer::bind() {
  if (impl_->options.port == 0) return impl_->server.bind_to_any_port(impl_->options.host);
  return impl_->server.bind_to_port(impl_->options.host, impl_->options.port) ? impl_->options.port : -1;
}

bool TriageHttpServer::run() { return impl_->server.listen_after_bind(); }

void TriageHttpServer::stop() { impl_->server.stop(); }

bool serve(TriageService& service, const ServeOptions& options) {
  TriageHttpServer server(service, options);
  if (server.bind() < 0) return false;
  return server.run();
}

}  // namespace hsmstack

#pragma once

// HTTP front end for the review workflow. The handlers are plain functions
// of their inputs so they can be exercised without a socket.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "hsmstack/triage.hpp"

namespace hsmstack {

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

struct TriageInputs {
  std::vector<HsmRecord> hsm;
  std::vector<Prediction> cxe;
  std::vector<Prediction> kld;
  std::vector<Prediction> knn;
  std::vector<GlyphImage> images;  // may be empty; then /api/image omits pixels
};

class TriageService {
 public:
  TriageService(TriageInputs inputs, TriageThresholds thresholds,
                std::optional<std::filesystem::path> decision_log = std::nullopt);

  /// Query keys: min_entropy, min_annotations, reason (high-entropy | model-disagreement).
  [[nodiscard]] Response flagged(const std::map<std::string, std::string>& query) const;
  [[nodiscard]] Response image(const std::string& image_id) const;
  Response decision(const std::string& body);
  [[nodiscard]] Response export_labels() const;

  [[nodiscard]] std::size_t flag_count() const { return flagged_.size(); }

 private:
  TriageInputs in_;
  TriageThresholds thresholds_;
  std::vector<FlaggedItem> flagged_;
  mutable std::shared_mutex mutex_;
  DecisionStore store_;
};

struct ServeOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::filesystem::path> static_dir;
};

class TriageHttpServer {
 public:
  TriageHttpServer(TriageService& service, const ServeOptions& options);
  ~TriageHttpServer();
  TriageHttpServer(const TriageHttpServer&) = delete;
  TriageHttpServer& operator=(const TriageHttpServer&) = delete;

  /// Binds the socket; port 0 picks a free one. Returns the bound port or -1.
  int bind();
  /// Serves until stop() is called from another thread.
  bool run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// bind() + run(). Returns false if the socket cannot be bound.
bool serve(TriageService& service, const ServeOptions& options);

}  // namespace hsmstack

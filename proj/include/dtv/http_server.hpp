#pragma once

// HTTP/JSON front end over a RetrievalEngine.
//
//   POST   /sessions                          -> 201 {session_id}
//   POST   /sessions/{id}/turns  {text|embedding} -> {session_id, turn_index}
//   GET    /sessions/{id}/ranking?k=10        -> {session_id, turns, results:[{rank, video_id, score}]}
//   GET    /sessions/{id}/attention/{video}   -> {session_id, video_id, weights:[c_i], score}
//   DELETE /sessions/{id}                     -> {deleted}
//   GET    /health                            -> {status, videos, mode, dim}
//
// Errors are {"error": message} with 400 (malformed request), 404 (unknown
// session or video), 409 (turn limit) or 503 (embedding provider down).

#include "dtv/service.hpp"

#include <memory>
#include <string>

namespace dtv {

class RetrievalServer {
 public:
  explicit RetrievalServer(std::shared_ptr<RetrievalEngine> engine);
  ~RetrievalServer();
  RetrievalServer(const RetrievalServer&) = delete;
  RetrievalServer& operator=(const RetrievalServer&) = delete;

  /// Binds without serving; port 0 picks a free port. Returns the bound port
  /// or -1.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  bool serve();
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace dtv

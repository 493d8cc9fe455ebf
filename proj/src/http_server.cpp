#include "dtv/http_server.hpp"

#include <httplib.h>

namespace dtv {

namespace {

void reply(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

// Runs a handler and translates engine errors into HTTP statuses.
template <typename F>
void guarded(httplib::Response& res, F&& handler) {
  try {
    handler();
  } catch (const NotFoundError& e) {
    reply(res, 404, {{"error", e.what()}});
  } catch (const BadRequestError& e) {
    reply(res, 400, {{"error", e.what()}});
  } catch (const TurnLimitError& e) {
    reply(res, 409, {{"error", e.what()}});
  } catch (const ProviderUnavailableError& e) {
    reply(res, 503, {{"error", e.what()}});
  } catch (const nlohmann::json::exception& e) {
    reply(res, 400, {{"error", std::string("malformed JSON: ") + e.what()}});
  } catch (const std::exception& e) {
    reply(res, 500, {{"error", e.what()}});
  }
}

}  // namespace

struct RetrievalServer::Impl {
  std::shared_ptr<RetrievalEngine> engine;
  httplib::Server server;
};

RetrievalServer::RetrievalServer(std::shared_ptr<RetrievalEngine> engine) : impl_(std::make_unique<Impl>()) {
  impl_->engine = std::move(engine);
  auto& server = impl_->server;
  RetrievalEngine* e = impl_->engine.get();

  server.Get("/health", [e](const httplib::Request&, httplib::Response& res) {
    reply(res, 200,
          {{"status", "ok"},
           {"videos", e->index().ids.size()},
           {"mode", to_string(e->params().config().mode)},
           {"dim", e->params().config().dim},
           {"max_turns", e->options().max_turns}});
  });

  server.Post("/sessions", [e](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { reply(res, 201, {{"session_id", e->create_session()}}); });
  });

  server.Post(R"(/sessions/([^/]+)/turns)", [e](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::exception&) {
        throw BadRequestError("turn body is not valid JSON");
      }
      if (!body.is_object()) throw BadRequestError("turn body must be a JSON object");
      const bool has_text = body.contains("text");
      const bool has_embedding = body.contains("embedding");
      if (has_text == has_embedding) throw BadRequestError("turn needs exactly one of 'text' or 'embedding'");
      Index turn = 0;
      if (has_text) {
        if (!body["text"].is_string()) throw BadRequestError("'text' must be a string");
        turn = e->add_turn_text(id, body["text"].get<std::string>());
      } else {
        if (!body["embedding"].is_array()) throw BadRequestError("'embedding' must be an array of numbers");
        std::vector<float> values;
        for (const auto& v : body["embedding"]) {
          if (!v.is_number()) throw BadRequestError("'embedding' must be an array of numbers");
          values.push_back(v.get<float>());
        }
        turn = e->add_turn_embedding(id, Eigen::Map<const Vector<float>>(values.data(), static_cast<Index>(values.size())));
      }
      reply(res, 200, {{"session_id", id}, {"turn_index", turn}});
    });
  });

  server.Get(R"(/sessions/([^/]+)/ranking)", [e](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      Index k = 10;
      if (req.has_param("k")) {
        try {
          k = std::stol(req.get_param_value("k"));
        } catch (const std::exception&) {
          throw BadRequestError("k must be an integer");
        }
        if (k < 1) throw BadRequestError("k must be at least 1");
      }
      const RankingResult ranking = e->ranking(id, k);
      nlohmann::json results = nlohmann::json::array();
      for (std::size_t i = 0; i < ranking.ranked.size(); ++i) {
        results.push_back(
            {{"rank", i + 1}, {"video_id", ranking.ranked[i].first}, {"score", ranking.ranked[i].second}});
      }
      reply(res, 200, {{"session_id", id}, {"turns", e->turn_count(id)}, {"results", std::move(results)}});
    });
  });

  server.Get(R"(/sessions/([^/]+)/attention/([^/]+))", [e](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      const AttentionResult a = e->attention(id, req.matches[2]);
      reply(res, 200,
            {{"session_id", id},
             {"video_id", a.video_id},
             {"weights", std::vector<double>(a.weights.data(), a.weights.data() + a.weights.size())},
             {"score", a.score}});
    });
  });

  server.Delete(R"(/sessions/([^/]+))", [e](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      e->delete_session(id);
      reply(res, 200, {{"deleted", id}});
    });
  });
}

RetrievalServer::~RetrievalServer() { stop(); }

int RetrievalServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool RetrievalServer::serve() { return impl_->server.listen_after_bind(); }

void RetrievalServer::stop() {
  if (impl_) impl_->server.stop();
}

bool RetrievalServer::running() const { return impl_->server.is_running(); }

}  // namespace dtv

#pragma once

#include <condition_variable>
#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>

#include "json.hpp"

#include "tl/model_client.hpp"
#include "tl/session.hpp"

namespace httplib {
class Server;
}

namespace tl {

struct ApiRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
  std::map<std::string, std::string> headers;  // lower-case names
};

struct ApiResponse {
  int status = 200;
  std::string body;
  std::map<std::string, std::string> headers;
};

struct ServiceOptions {
  std::string cors_origin = "*";
};

// HTTP-agnostic request handling; bind() attaches it to a server. Sampling
// runs on a background worker and is polled through /jobs/{id}.
class ApiService {
 public:
  // `sampler` may be null; prompts then need inline generations.
  ApiService(SessionStore& store, LatticeCache& cache, ModelClient* sampler,
             ServiceOptions options = {});
  ~ApiService();
  ApiService(const ApiService&) = delete;
  ApiService& operator=(const ApiService&) = delete;

  ApiResponse handle(const ApiRequest& request);
  void bind(httplib::Server& server);

  // Blocks until every queued job has finished.
  void drain();

 private:
  struct Job {
    std::string id;
    std::string session_id;
    std::string prompt_id;
    std::string status;  // pending | running | done | failed
    std::size_t generation_count = 0;
    nlohmann::json error;
  };

  ApiResponse route(const ApiRequest& request);
  ApiResponse create_session(const ApiRequest& request);
  ApiResponse import_session(const ApiRequest& request);
  ApiResponse add_prompt(const std::string& session_id, const ApiRequest& request);
  ApiResponse graph(const std::string& session_id, const ApiRequest& request);
  ApiResponse generations(const std::string& session_id, const ApiRequest& request);
  ApiResponse generation_path(const std::string& session_id, const std::string& generation_id,
                              const ApiRequest& request);
  ApiResponse put_view(const std::string& session_id, const ApiRequest& request);
  ApiResponse job(const std::string& job_id);

  std::string new_job(const std::string& session_id, const std::string& prompt_id,
                      const std::string& status);
  void update_job(const std::string& job_id, const std::function<void(Job&)>& fn);
  void enqueue(std::function<void()> task);
  void worker_loop();

  SessionStore& store_;
  LatticeCache& cache_;
  ModelClient* sampler_;
  ServiceOptions options_;

  std::mutex jobs_mu_;
  std::map<std::string, Job> jobs_;
  std::size_t job_counter_ = 0;

  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::condition_variable idle_cv_;
  std::deque<std::function<void()>> queue_;
  bool busy_ = false;
  bool stopping_ = false;
  std::thread worker_;
};

// Maps a caught exception to {status, {"error": {code, message, detail}}}.
ApiResponse error_response(std::exception_ptr error);

}  // namespace tl

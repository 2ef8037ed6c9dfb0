#include "tl/service.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "httplib.h"

#include "tl/digest.hpp"
#include "tl/errors.hpp"

namespace tl {
namespace {

using nlohmann::json;

ApiResponse json_response(int status, const json& body) {
  return {status, body.dump(), {{"Content-Type", "application/json"}}};
}

ApiResponse error_body(int status, const char* code, const std::string& message,
                       const json& detail = nullptr) {
  return json_response(status, {{"error", {{"code", code}, {"message", message}, {"detail", detail}}}});
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) parts.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) parts.push_back(std::move(cur));
  return parts;
}

json parse_body(const std::string& body, bool allow_empty) {
  if (body.find_first_not_of(" \t\r\n") == std::string::npos) {
    if (allow_empty) return json::object();
    throw InvalidArgument("request body is required");
  }
  json doc = json::parse(body, nullptr, false);
  if (doc.is_discarded()) throw InvalidArgument("request body is not valid JSON");
  if (!doc.is_object()) throw InvalidArgument("request body must be a JSON object");
  return doc;
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end || !std::isfinite(v)) {
    throw InvalidArgument("query parameter '" + key + "' must be a number");
  }
  return v;
}

std::set<std::string> parse_selection(const std::string& text) {
  std::set<std::string> out;
  std::string cur;
  for (char c : text + ",") {
    if (c == ',') {
      if (!cur.empty()) out.insert(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  return out;
}

// Query parameters override the stored view.
ViewState view_from_query(const std::map<std::string, std::string>& q, ViewState v) {
  if (const auto it = q.find("mode"); it != q.end()) {
    const auto m = parse_segmentation_mode(it->second);
    if (!m) throw InvalidArgument("unknown mode '" + it->second + "'");
    v.mode = *m;
  }
  if (const auto it = q.find("threshold"); it != q.end()) v.merge_threshold = parse_double("threshold", it->second);
  if (const auto it = q.find("lambda"); it != q.end()) v.lambda = parse_double("lambda", it->second);
  if (const auto it = q.find("longtail"); it != q.end()) v.longtail_t = parse_double("longtail", it->second);
  if (const auto it = q.find("seed"); it != q.end()) {
    std::uint64_t seed = 0;
    const auto* end = it->second.data() + it->second.size();
    const auto [p, ec] = std::from_chars(it->second.data(), end, seed);
    if (ec != std::errc() || p != end) throw InvalidArgument("query parameter 'seed' must be an unsigned integer");
    v.seed = seed;
  }
  if (const auto it = q.find("layout"); it != q.end()) {
    const auto l = parse_comparison_layout(it->second);
    if (!l) throw InvalidArgument("unknown layout '" + it->second + "'");
    v.comparison = *l;
  }
  if (const auto it = q.find("selection"); it != q.end()) v.selected_node_ids = parse_selection(it->second);
  v.validate();
  return v;
}

GeometryHints hints_from_query(const std::map<std::string, std::string>& q) {
  GeometryHints hints;
  const auto it = q.find("hints");
  if (it == q.end()) return hints;
  const json doc = json::parse(it->second, nullptr, false);
  if (!doc.is_object()) throw InvalidArgument("'hints' must be a JSON object of {rx, ry}");
  for (const auto& [id, g] : doc.items()) {
    if (!g.is_object() || !g.contains("rx") || !g.contains("ry") || !g["rx"].is_number() ||
        !g["ry"].is_number() || g["rx"].get<double>() <= 0.0 || g["ry"].get<double>() <= 0.0) {
      throw InvalidArgument("hint for '" + id + "' needs positive rx and ry");
    }
    hints[id] = {g["rx"].get<double>(), g["ry"].get<double>()};
  }
  return hints;
}

json session_summary(const SessionState& s) {
  json prompts = json::array();
  for (const auto& p : s.prompts) prompts.push_back(to_json(p));
  return {{"session_id", s.session_id},
          {"version", s.version},
          {"digest", s.digest()},
          {"prompts", std::move(prompts)},
          {"generation_count", s.generations.size()},
          {"view", to_json(s.view)}};
}

std::vector<const TokenLattice*> lattices_of(const std::vector<ComparisonPanel>& panels) {
  std::vector<const TokenLattice*> out;
  for (const auto& p : panels) out.push_back(p.lattice.get());
  return out;
}

FilterResult filter_or_bad_request(const std::vector<ComparisonPanel>& panels,
                                   const std::set<std::string>& selection) {
  const auto lattices = lattices_of(panels);
  try {
    return select_nodes(lattices, selection);
  } catch (const NotFound& e) {
    throw InvalidArgument(std::string("selection: ") + e.what());
  }
}

}  // namespace

ApiResponse error_response(std::exception_ptr error) {
  try {
    std::rethrow_exception(error);
  } catch (const InvalidArgument& e) {
    return error_body(400, "bad_request", e.what());
  } catch (const ContractViolation& e) {
    return error_body(400, "bad_request", e.what());
  } catch (const ParseError& e) {
    return error_body(400, "bad_request", e.what(), e.line() ? json(e.line()) : json(nullptr));
  } catch (const json::exception& e) {
    return error_body(400, "bad_request", e.what());
  } catch (const NotFound& e) {
    return error_body(404, "not_found", e.what());
  } catch (const Conflict& e) {
    return error_body(409, "conflict", e.what());
  } catch (const PartialResultError& e) {
    return error_body(502, "provider_error", e.what(), {{"completed", e.completed().size()}});
  } catch (const ProviderError& e) {
    return error_body(502, "provider_error", e.what(),
                      {{"attempts", e.retry().attempts}, {"http_status", e.retry().http_status}});
  } catch (const std::exception& e) {
    return error_body(500, "internal", e.what());
  } catch (...) {
    return error_body(500, "internal", "unknown error");
  }
}

ApiService::ApiService(SessionStore& store, LatticeCache& cache, ModelClient* sampler,
                       ServiceOptions options)
    : store_(store), cache_(cache), sampler_(sampler), options_(std::move(options)) {
  worker_ = std::thread([this] { worker_loop(); });
}

ApiService::~ApiService() {
  {
    std::lock_guard lock(queue_mu_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  worker_.join();
}

void ApiService::enqueue(std::function<void()> task) {
  {
    std::lock_guard lock(queue_mu_);
    queue_.push_back(std::move(task));
  }
  queue_cv_.notify_one();
}

void ApiService::worker_loop() {
  std::unique_lock lock(queue_mu_);
  while (true) {
    queue_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
    if (queue_.empty()) return;
    auto task = std::move(queue_.front());
    queue_.pop_front();
    busy_ = true;
    lock.unlock();
    task();
    lock.lock();
    busy_ = false;
    if (queue_.empty()) idle_cv_.notify_all();
  }
}

void ApiService::drain() {
  std::unique_lock lock(queue_mu_);
  idle_cv_.wait(lock, [&] { return queue_.empty() && !busy_; });
}

ApiResponse ApiService::handle(const ApiRequest& request) {
  ApiResponse res;
  try {
    res = route(request);
  } catch (...) {
    res = error_response(std::current_exception());
  }
  res.headers["Access-Control-Allow-Origin"] = options_.cors_origin;
  res.headers["Access-Control-Expose-Headers"] = "ETag";
  return res;
}

ApiResponse ApiService::route(const ApiRequest& r) {
  const auto parts = split_path(r.path);
  const auto& m = r.method;
  if (m == "OPTIONS") {
    ApiResponse res{204, "", {}};
    res.headers["Access-Control-Allow-Methods"] = "GET, POST, PUT, OPTIONS";
    res.headers["Access-Control-Allow-Headers"] = "Content-Type, If-None-Match";
    return res;
  }
  if (parts.size() == 1 && parts[0] == "health" && m == "GET") {
    return json_response(200, {{"status", "ok"}, {"sessions", store_.size()}});
  }
  if (parts.size() == 2 && parts[0] == "jobs" && m == "GET") return job(parts[1]);
  if (!parts.empty() && parts[0] == "sessions") {
    if (parts.size() == 1 && m == "POST") return create_session(r);
    if (parts.size() == 2 && parts[1] == "import" && m == "POST") return import_session(r);
    if (parts.size() >= 2) {
      const std::string& id = parts[1];
      if (parts.size() == 2 && m == "GET") return json_response(200, session_summary(*store_.get(id)));
      if (parts.size() == 3) {
        const std::string& leaf = parts[2];
        if (leaf == "prompts" && m == "POST") return add_prompt(id, r);
        if (leaf == "graph" && m == "GET") return graph(id, r);
        if (leaf == "generations" && m == "GET") return generations(id, r);
        if (leaf == "view" && m == "PUT") return put_view(id, r);
        if (leaf == "export" && m == "GET") return json_response(200, save_session(*store_.get(id), &cache_));
        if (leaf == "undo" && m == "POST") {
          try {
            return json_response(200, session_summary(*store_.undo(id)));
          } catch (const NotFound&) {
            store_.get(id);  // unknown session stays a 404
            throw Conflict("nothing to undo");
          }
        }
      }
      if (parts.size() == 5 && parts[2] == "generations" && parts[4] == "path" && m == "GET") {
        return generation_path(id, parts[3], r);
      }
    }
  }
  return error_body(404, "not_found", "no route for " + m + " " + r.path);
}

ApiResponse ApiService::create_session(const ApiRequest& r) {
  const json body = parse_body(r.body, true);
  ViewState view;
  if (const auto it = body.find("view"); it != body.end()) view = view_state_from_json(*it);
  for (const auto& [key, _] : body.items()) {
    if (key != "view") throw InvalidArgument("unknown field '" + key + "'");
  }
  const auto s = store_.create(view);
  return json_response(201, session_summary(*s));
}

ApiResponse ApiService::import_session(const ApiRequest& r) {
  const json body = parse_body(r.body, false);
  auto state = load_session(body, &cache_);
  const auto s = store_.adopt(std::move(state));
  return json_response(201, session_summary(*s));
}

ApiResponse ApiService::add_prompt(const std::string& session_id, const ApiRequest& r) {
  json body = parse_body(r.body, false);
  std::optional<json> inline_gens;
  if (const auto it = body.find("generations"); it != body.end()) {
    if (!it->is_array()) throw InvalidArgument("'generations' must be an array");
    inline_gens = *it;
    body.erase("generations");
  }
  const PromptConfig config = prompt_config_from_json(body);

  if (inline_gens) {
    std::vector<RawGeneration> gens;
    for (std::size_t i = 0; i < inline_gens->size(); ++i) {
      const json& g = (*inline_gens)[i];
      RawGeneration raw;
      if (g.is_string()) {
        raw.text = g.get<std::string>();
      } else if (g.is_object()) {
        json copy = g;
        if (!copy.contains("id")) copy["id"] = "";
        raw = raw_generation_from_json(copy);
      } else {
        throw InvalidArgument("generations[" + std::to_string(i) + "] must be a string or object");
      }
      if (raw.id.empty()) raw.id = config.prompt_id + ":" + std::to_string(i);
      raw.prompt_id = config.prompt_id;
      if (raw.model_id.empty()) raw.model_id = config.model_id;
      raw.sample_index = i;
      gens.push_back(std::move(raw));
    }
    const auto s = store_.update(session_id, [&](const SessionState& st) {
      return add_generations(tl::add_prompt(st, config), config.prompt_id, std::move(gens));
    });
    const auto job_id = new_job(session_id, config.prompt_id, "done");
    update_job(job_id, [&](Job& j) { j.generation_count = inline_gens->size(); });
    return json_response(202, {{"job_id", job_id}, {"status", "done"}, {"session", session_summary(*s)}});
  }

  const auto s = store_.update(session_id, [&](const SessionState& st) { return tl::add_prompt(st, config); });
  const auto job_id = new_job(session_id, config.prompt_id, "pending");
  enqueue([this, job_id, session_id, config] {
    update_job(job_id, [](Job& j) { j.status = "running"; });
    try {
      if (!sampler_) throw ConfigError("no chat provider configured", {0, false, 0, {}});
      GenerationRequest req;
      req.prompt_text = config.prompt_text;
      req.model_id = config.model_id;
      req.temperature = config.temperature;
      req.n = config.n_generations;
      auto gens = sampler_->sample(req, config.prompt_id);
      const std::size_t count = gens.size();
      store_.update(session_id, [&](const SessionState& st) {
        return add_generations(st, config.prompt_id, std::move(gens));
      });
      update_job(job_id, [&](Job& j) {
        j.status = "done";
        j.generation_count = count;
      });
    } catch (...) {
      const ApiResponse err = error_response(std::current_exception());
      update_job(job_id, [&](Job& j) {
        j.status = "failed";
        j.error = json::parse(err.body)["error"];
      });
    }
  });
  return json_response(202, {{"job_id", job_id}, {"status", "pending"}, {"session", session_summary(*s)}});
}

std::string ApiService::new_job(const std::string& session_id, const std::string& prompt_id,
                                const std::string& status) {
  std::lock_guard lock(jobs_mu_);
  const std::string id = "j" + std::to_string(++job_counter_);
  jobs_[id] = Job{id, session_id, prompt_id, status, 0, nullptr};
  return id;
}

void ApiService::update_job(const std::string& job_id, const std::function<void(Job&)>& fn) {
  std::lock_guard lock(jobs_mu_);
  fn(jobs_.at(job_id));
}

ApiResponse ApiService::job(const std::string& job_id) {
  std::lock_guard lock(jobs_mu_);
  const auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw NotFound("unknown job '" + job_id + "'");
  const Job& j = it->second;
  return json_response(200, {{"job_id", j.id},
                             {"session_id", j.session_id},
                             {"prompt_id", j.prompt_id},
                             {"status", j.status},
                             {"generation_count", j.generation_count},
                             {"error", j.error}});
}

ApiResponse ApiService::graph(const std::string& session_id, const ApiRequest& r) {
  const auto snapshot = store_.get(session_id);
  SessionState effective = *snapshot;
  effective.view = view_from_query(r.query, snapshot->view);
  const GeometryHints hints = hints_from_query(r.query);

  json hint_doc = json::object();
  for (const auto& [id, g] : hints) hint_doc[id] = {g.rx, g.ry};
  const std::string etag =
      "\"" + sha256_hex(snapshot->digest() + "\n" + to_json(effective.view).dump() + "\n" + hint_doc.dump())
                 .substr(0, 32) + "\"";
  if (const auto it = r.headers.find("if-none-match"); it != r.headers.end() && it->second == etag) {
    return {304, "", {{"ETag", etag}}};
  }

  const auto panels = assemble_comparison(effective, cache_);
  const FilterResult filter = filter_or_bad_request(panels, effective.view.selected_node_ids);
  LayoutParams params;
  params.lambda = effective.view.lambda;
  params.seed = effective.view.seed;
  params.longtail = effective.view.longtail_t;
  const PromptPalette palette = effective.palette();

  json out_panels = json::array();
  for (const auto& p : panels) {
    LayoutResult layout =
        hints.empty() ? *cache_.layout(p.generations, effective.view.mode, effective.view.merge_threshold,
                                       params, palette)
                      : compute_layout(*p.lattice, params, palette, hints);
    apply_emphasis(layout, *p.lattice, filter.emphasized_generation_ids);
    out_panels.push_back({{"scope", p.scope},
                          {"lattice", to_json(*p.lattice)},
                          {"stats", to_json(stats(*p.lattice))},
                          {"layout", to_json(layout, params)}});
  }
  json palette_doc = json::object();
  for (const auto& [prompt, rgb] : palette) palette_doc[prompt] = rgb_to_hex(rgb);
  const json body{{"session_id", snapshot->session_id},
                  {"digest", snapshot->digest()},
                  {"view", to_json(effective.view)},
                  {"palette", std::move(palette_doc)},
                  {"filter", to_json(filter)},
                  {"panels", std::move(out_panels)}};
  ApiResponse res = json_response(200, body);
  res.headers["ETag"] = etag;
  return res;
}

ApiResponse ApiService::generations(const std::string& session_id, const ApiRequest& r) {
  const auto snapshot = store_.get(session_id);
  SessionState effective = *snapshot;
  effective.view = view_from_query(r.query, snapshot->view);
  std::string filter_kind = "selection";
  if (const auto it = r.query.find("filter"); it != r.query.end()) filter_kind = it->second;
  if (filter_kind != "selection" && filter_kind != "none") {
    throw InvalidArgument("filter must be 'selection' or 'none'");
  }
  std::set<std::string> emphasized;
  if (filter_kind == "selection" && !effective.view.selected_node_ids.empty()) {
    emphasized = filter_or_bad_request(assemble_comparison(effective, cache_),
                                       effective.view.selected_node_ids)
                     .emphasized_generation_ids;
  } else {
    for (const auto& g : effective.generations) emphasized.insert(g.id);
  }
  json items = json::array();
  for (const auto& g : effective.generations) {
    json item = to_json(g);
    item["emphasized"] = emphasized.contains(g.id);
    items.push_back(std::move(item));
  }
  return json_response(200, {{"session_id", session_id}, {"generations", std::move(items)}});
}

ApiResponse ApiService::generation_path(const std::string& session_id, const std::string& generation_id,
                                        const ApiRequest& r) {
  const auto snapshot = store_.get(session_id);
  SessionState effective = *snapshot;
  effective.view = view_from_query(r.query, snapshot->view);
  for (const auto& p : assemble_comparison(effective, cache_)) {
    if (!p.lattice->find_generation(generation_id)) continue;
    return json_response(200, {{"generation_id", generation_id},
                               {"scope", p.scope},
                               {"node_ids", crosslink(*p.lattice, generation_id)}});
  }
  throw NotFound("unknown generation '" + generation_id + "'");
}

ApiResponse ApiService::put_view(const std::string& session_id, const ApiRequest& r) {
  const json body = parse_body(r.body, false);
  const auto s = store_.update(session_id, [&](const SessionState& st) {
    json without = body;
    without.erase("threshold");
    without.erase("selected_node_ids");
    SessionState next = st;
    next.view = view_state_from_json(without, st.view);
    if (const auto it = body.find("threshold"); it != body.end()) {
      if (!it->is_number()) throw InvalidArgument("'threshold' must be a number");
      next = set_merge_threshold(next, it->get<double>(), cache_);
    }
    if (const auto it = body.find("selected_node_ids"); it != body.end()) {
      if (!it->is_array()) throw InvalidArgument("'selected_node_ids' must be an array");
      std::set<std::string> ids;
      for (const auto& id : *it) {
        if (!id.is_string()) throw InvalidArgument("'selected_node_ids' must hold strings");
        ids.insert(id.get<std::string>());
      }
      try {
        next = set_selection(next, std::move(ids), cache_);
      } catch (const NotFound& e) {
        throw InvalidArgument(std::string("selection: ") + e.what());
      }
    }
    return next;
  });
  return json_response(200, session_summary(*s));
}

void ApiService::bind(httplib::Server& server) {
  const auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
    ApiRequest r;
    r.method = req.method;
    r.path = req.path;
    r.body = req.body;
    for (const auto& [k, v] : req.params) r.query.emplace(k, v);
    for (const auto& [k, v] : req.headers) {
      std::string lower = k;
      for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      r.headers.emplace(std::move(lower), v);
    }
    ApiResponse out = handle(r);
    res.status = out.status;
    std::string content_type = "application/json";
    for (const auto& [k, v] : out.headers) {
      if (k == "Content-Type") {
        content_type = v;
      } else {
        res.set_header(k, v);
      }
    }
    if (!out.body.empty()) res.set_content(out.body, content_type);
  };
  server.Get(".*", dispatch);
  server.Post(".*", dispatch);
  server.Put(".*", dispatch);
  server.Options(".*", dispatch);
}

}  // namespace tl

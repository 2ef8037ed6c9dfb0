#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "httplib.h"

#include "tl/errors.hpp"
#include "tl/lattice.hpp"
#include "tl/layout.hpp"
#include "tl/model_client.hpp"
#include "tl/service.hpp"

namespace {

using nlohmann::json;

enum Exit { kOk = 0, kUsage = 2, kExternal = 3 };

struct EmbedderOptions {
  std::string kind = "fallback";
  std::string url = "http://127.0.0.1:8090";
  std::string model = "Xenova/all-MiniLM-L6-v2";
  std::string stopwords;
};

void add_embedder_options(CLI::App* cmd, EmbedderOptions& o) {
  cmd->add_option("--embedder", o.kind, "fallback | remote")->check(CLI::IsMember({"fallback", "remote"}));
  cmd->add_option("--embed-url", o.url, "Embedding service base URL");
  cmd->add_option("--embed-model", o.model, "Embedding model name");
  cmd->add_option("--stopwords", o.stopwords, "Stopword file, one word per line");
}

std::unique_ptr<tl::EmbeddingProvider> make_embedder(const EmbedderOptions& o) {
  if (o.kind == "remote") {
    tl::RemoteEmbedderConfig c;
    c.base_url = o.url;
    c.model = o.model;
    if (const char* key = std::getenv("TOKENLATTICE_EMBED_API_KEY"); key && *key) c.api_key = key;
    return std::make_unique<tl::RemoteEmbedder>(c);
  }
  return std::make_unique<tl::FallbackEmbedder>();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw tl::NotFound("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_output(const std::string& path, const std::string& data) {
  if (path.empty() || path == "-") {
    std::cout << data;
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << data;
  if (!out) throw std::runtime_error("cannot write " + path);
}

json parse_json_file(const std::string& path) {
  const std::string text = read_file(path);
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw tl::ParseError(path + ": not valid JSON", 0);
  return doc;
}

tl::TokenLattice load_lattice(const std::string& path) { return tl::lattice_from_json(parse_json_file(path)); }

std::unique_ptr<tl::ChatProvider> make_chat_provider(const std::string& base_url) {
  auto config = tl::ChatProviderConfig::from_env();
  if (!base_url.empty()) config.base_url = base_url;
  return std::make_unique<tl::OpenAIChatProvider>(config);
}

httplib::Server* g_server = nullptr;

void stop_server(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Build, lay out and serve token lattices over sampled text."};
  app.set_config("--config", "", "key=value file; command-line flags take precedence");
  app.require_subcommand(1);

  // build
  std::string b_input, b_out, b_mode = "space", b_prompt = "default", b_format = "json";
  double b_threshold = tl::kDefaultMergeThreshold;
  std::uint64_t b_seed = 42;
  unsigned b_threads = 0;
  EmbedderOptions b_embed;
  auto* build = app.add_subcommand("build", "Corpus (.jsonl or text) to lattice JSON");
  build->add_option("--input", b_input, "Corpus file")->required();
  build->add_option("--mode", b_mode, "Segmentation mode")->check(CLI::IsMember({"space", "sentence", "phrase"}));
  build->add_option("--threshold", b_threshold, "Merge threshold");
  build->add_option("--prompt-id", b_prompt, "Prompt id for records without one");
  build->add_option("--format", b_format, "json | dot | stats")->check(CLI::IsMember({"json", "dot", "stats"}));
  build->add_option("--threads", b_threads, "Scoring threads (0: all cores)");
  build->add_option("--seed", b_seed, "Accepted for uniformity; building is seed-free");
  build->add_option("--out", b_out, "Output file (default stdout)");
  add_embedder_options(build, b_embed);

  // render
  std::string r_lattice, r_svg, r_json, r_hints, r_params;
  tl::LayoutParams r_layout;
  auto* render = app.add_subcommand("render", "Lattice JSON to layout JSON and/or SVG");
  render->add_option("--lattice", r_lattice, "Lattice JSON")->required();
  render->add_option("--lambda", r_layout.lambda, "Parent interpolation in [0, 1]");
  render->add_option("--longtail", r_layout.longtail, "Hide-longtail slider in [0, 1]");
  render->add_option("--seed", r_layout.seed, "Layout seed");
  render->add_option("--max-iterations", r_layout.max_iterations, "Simulation tick budget");
  render->add_option("--params", r_params, "Layout parameter JSON; flags override");
  render->add_option("--hints", r_hints, "JSON {node_id: {rx, ry}} label geometry");
  render->add_option("--svg", r_svg, "SVG output file");
  render->add_option("--json", r_json, "Layout JSON output file (default stdout when --svg is absent)");

  // stats
  std::string s_lattice;
  std::uint64_t s_seed = 42;
  auto* stats_cmd = app.add_subcommand("stats", "Lattice statistics as JSON");
  stats_cmd->add_option("--lattice", s_lattice, "Lattice JSON")->required();
  stats_cmd->add_option("--seed", s_seed, "Accepted for uniformity");

  // sample
  std::string p_prompt, p_model = "gpt-4o-mini", p_prompt_id = "default", p_cache = ".tokenlattice/cache",
                        p_base_url, p_out;
  int p_n = 20;
  double p_temperature = 0.7;
  std::optional<std::uint64_t> p_seed;
  auto* sample = app.add_subcommand("sample", "Sample completions as JSON lines");
  sample->add_option("--prompt", p_prompt, "Prompt text")->required();
  sample->add_option("--n", p_n, "Number of completions");
  sample->add_option("--temperature", p_temperature, "Sampling temperature");
  sample->add_option("--model", p_model, "Model id");
  sample->add_option("--prompt-id", p_prompt_id, "Prompt id stamped on each record");
  sample->add_option("--cache-dir", p_cache, "Generation cache directory");
  sample->add_option("--base-url", p_base_url, "Chat-completion base URL (else TOKENLATTICE_BASE_URL)");
  sample->add_option("--seed", p_seed, "Client seed forwarded to the provider");
  sample->add_option("--out", p_out, "Output file (default stdout)");

  // serve
  std::string v_host = "127.0.0.1", v_cache = ".tokenlattice/cache", v_base_url, v_cors = "*";
  int v_port = 8080;
  EmbedderOptions v_embed;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--host", v_host, "Bind address");
  serve->add_option("--port", v_port, "Port");
  serve->add_option("--cache-dir", v_cache, "Generation cache directory");
  serve->add_option("--base-url", v_base_url, "Chat-completion base URL (else TOKENLATTICE_BASE_URL)");
  serve->add_option("--cors-origin", v_cors, "Access-Control-Allow-Origin value");
  add_embedder_options(serve, v_embed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*build) {
      const auto mode = tl::parse_segmentation_mode(b_mode);
      const auto raw = tl::import_corpus(b_input, b_prompt);
      auto embedder = make_embedder(b_embed);
      std::optional<tl::StopwordList> stopwords;
      tl::BuilderOptions options;
      options.mode = *mode;
      options.scorer.threads = b_threads;
      if (!b_embed.stopwords.empty()) {
        stopwords = tl::StopwordList::parse(read_file(b_embed.stopwords));
        options.scorer.stopwords = &*stopwords;
      }
      tl::LatticeBuilder builder(raw, *embedder, options);
      const auto lattice = builder.rebuild_with_threshold(b_threshold);
      std::string out;
      if (b_format == "dot") {
        out = tl::to_dot(lattice);
      } else if (b_format == "stats") {
        out = tl::to_json(tl::stats(lattice)).dump(2) + "\n";
      } else {
        out = tl::to_json(lattice).dump(2) + "\n";
      }
      write_output(b_out, out);
      std::fprintf(stderr, "built %zu generations into %zu nodes\n", lattice.generations.size(),
                   lattice.nodes.size());
    } else if (*render) {
      const auto lattice = load_lattice(r_lattice);
      tl::LayoutParams params = r_layout;
      if (!r_params.empty()) {
        json doc = parse_json_file(r_params);
        for (const auto* flag : {"--lambda", "--longtail", "--seed", "--max-iterations"}) {
          if (render->count(flag) == 0) continue;
          const std::string key = std::string(flag).substr(2);
          doc.erase(key == "max-iterations" ? "max_iterations" : key);
        }
        const auto from_file = tl::layout_params_from_json(doc);
        const auto flags = params;
        params = from_file;
        if (render->count("--lambda")) params.lambda = flags.lambda;
        if (render->count("--longtail")) params.longtail = flags.longtail;
        if (render->count("--seed")) params.seed = flags.seed;
        if (render->count("--max-iterations")) params.max_iterations = flags.max_iterations;
      }
      params.validate();
      tl::GeometryHints hints;
      if (!r_hints.empty()) {
        for (const auto& [id, g] : parse_json_file(r_hints).items()) {
          hints[id] = {g.at("rx").get<double>(), g.at("ry").get<double>()};
        }
      }
      const auto layout = tl::compute_layout(lattice, params, tl::default_palette(lattice), hints);
      if (!r_svg.empty()) write_output(r_svg, tl::render_svg(layout, params));
      if (!r_json.empty() || r_svg.empty()) write_output(r_json, tl::to_json(layout, params).dump(2) + "\n");
      std::fprintf(stderr, "layout: %zu nodes, %d iterations, %s\n", layout.nodes.size(),
                   layout.iterations_used, layout.converged ? "converged" : "not converged");
    } else if (*stats_cmd) {
      write_output("", tl::to_json(tl::stats(load_lattice(s_lattice))).dump(2) + "\n");
    } else if (*sample) {
      tl::GenerationRequest req;
      req.prompt_text = p_prompt;
      req.model_id = p_model;
      req.temperature = p_temperature;
      req.n = p_n;
      req.client_seed = p_seed;
      req.validate();
      auto provider = make_chat_provider(p_base_url);
      tl::GenerationCache cache(p_cache);
      tl::ModelClient client(*provider, cache);
      const auto gens = client.sample(req, p_prompt_id);
      std::string out;
      for (const auto& g : gens) out += tl::to_json(g).dump() + "\n";
      write_output(p_out, out);
      std::fprintf(stderr, "%zu completions, %zu provider call(s)\n", gens.size(), client.provider_calls());
    } else if (*serve) {
      auto embedder = make_embedder(v_embed);
      auto provider = make_chat_provider(v_base_url);
      tl::GenerationCache generation_cache(v_cache);
      tl::ModelClient client(*provider, generation_cache);
      tl::LatticeCache lattice_cache(*embedder);
      tl::SessionStore store;
      tl::ApiService api(store, lattice_cache, &client, {v_cors});
      httplib::Server server;
      api.bind(server);
      g_server = &server;
      std::signal(SIGINT, stop_server);
      std::signal(SIGTERM, stop_server);
      std::fprintf(stderr, "listening on http://%s:%d\n", v_host.c_str(), v_port);
      if (!server.listen(v_host, v_port)) {
        std::fprintf(stderr, "error: cannot listen on %s:%d\n", v_host.c_str(), v_port);
        return kExternal;
      }
    }
  } catch (const tl::ProviderError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExternal;
  } catch (const tl::InvalidArgument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const tl::ContractViolation& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const tl::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const tl::NotFound& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExternal;
  }
  return kOk;
}

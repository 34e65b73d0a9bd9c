#include "mcqrag/strategies.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <regex>

#include <json.hpp>

#include "mcqrag/utf8.hpp"

namespace mcqrag {

namespace {

constexpr std::string_view kJsonReminder =
    "Your previous reply could not be read. Reply with only the JSON object {\"O\": \"A|B|C|D\", \"R\": \"...\"}.";

std::string k_ref(int k) { return "k=" + std::to_string(k); }

TraceEntry note(std::string text) { return {"note", std::move(text), 0}; }

std::string truncate_chars(const std::string& text, std::size_t max_chars) {
  if (utf8::length(text) <= max_chars) return text;
  auto cps = utf8::decode(text);
  cps.resize(max_chars);
  return utf8::encode(cps);
}

bool is_ascii_alnum(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

// Reads a JSON string body starting just after the opening quote; returns the
// decoded value, or nullopt when the string never closes.
std::optional<std::string> read_json_string(std::string_view text, std::size_t begin) {
  std::size_t i = begin;
  while (i < text.size()) {
    if (text[i] == '\\') {
      i += 2;
      continue;
    }
    if (text[i] == '"') break;
    ++i;
  }
  if (i >= text.size()) return std::nullopt;
  const std::string raw(text.substr(begin, i - begin));
  auto decoded = nlohmann::json::parse("\"" + raw + "\"", nullptr, false);
  if (decoded.is_string()) return decoded.get<std::string>();
  return raw;
}

std::optional<ModelAnswer> parse_strict(std::string_view text) {
  auto j = nlohmann::json::parse(utf8::trim(text), nullptr, false);
  if (!j.is_object()) return std::nullopt;
  auto o = j.find("O");
  if (o == j.end() || !o->is_string()) return std::nullopt;
  auto choice = parse_choice(o->get<std::string>());
  if (!choice) return std::nullopt;
  ModelAnswer out{*choice, ""};
  if (auto r = j.find("R"); r != j.end() && !r->is_null()) {
    out.rationale = r->is_string() ? r->get<std::string>() : r->dump();
  }
  return out;
}

std::optional<ModelAnswer> salvage(std::string_view text) {
  static const std::regex option_re(R"re("O"\s*:\s*"\s*([ABCD])\s*[.):]?(\s[^"]*)?")re");
  static const std::regex rationale_re(R"re("R"\s*:\s*")re");
  static const std::regex option_key_re(R"re("O"\s*:)re");

  std::cmatch m;
  if (!std::regex_search(text.data(), text.data() + text.size(), m, option_re)) return std::nullopt;
  ModelAnswer out{*parse_choice(m.str(1)), ""};
  const auto o_begin = static_cast<std::size_t>(m.position(0));
  const auto o_end = o_begin + static_cast<std::size_t>(m.length(0));

  // Prefer an "R" after the option within the same object, else the last one
  // before it since the object opened.
  const std::string_view after = text.substr(o_end);
  std::cmatch r;
  if (std::regex_search(after.data(), after.data() + after.size(), r, rationale_re)) {
    std::cmatch next_o;
    const char* r_at = after.data() + r.position(0);
    const bool other_object = std::regex_search(after.data(), r_at, next_o, option_key_re);
    if (!other_object) {
      if (auto v = read_json_string(text, o_end + static_cast<std::size_t>(r.position(0) + r.length(0)))) {
        out.rationale = *v;
        return out;
      }
    }
  }
  const auto brace = text.rfind('{', o_begin);
  const std::size_t scope = brace == std::string_view::npos ? 0 : brace;
  const std::string_view before = text.substr(scope, o_begin - scope);
  std::optional<std::size_t> last;
  for (auto it = std::cregex_iterator(before.data(), before.data() + before.size(), rationale_re);
       it != std::cregex_iterator(); ++it) {
    last = scope + static_cast<std::size_t>(it->position(0) + it->length(0));
  }
  if (last) {
    if (auto v = read_json_string(text, *last)) out.rationale = *v;
  }
  return out;
}

std::vector<std::string> split_terms(std::string_view text) {
  std::vector<std::string> terms;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find_first_of(",;\n", start);
    if (end == std::string_view::npos) end = text.size();
    std::string term = utf8::trim(text.substr(start, end - start));
    std::size_t lead = 0;
    while (lead < term.size() && (term[lead] == '-' || term[lead] == '*' || term[lead] == ' ')) ++lead;
    if (term.compare(lead, 3, "•") == 0) lead += 3;
    term = utf8::squeeze_whitespace(utf8::trim(std::string_view(term).substr(lead)));
    if (!term.empty()) terms.push_back(std::move(term));
    start = end + 1;
  }
  return terms;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

void check_temperature(double t, const char* what) {
  if (!std::isfinite(t) || t < 0.0 || t > 2.0) {
    throw std::invalid_argument(std::string(what) + " must be within [0, 2]");
  }
}

}  // namespace

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::zero_shot: return "zero_shot";
    case Strategy::local_rag: return "local_rag";
    case Strategy::local_fallback: return "local_fallback";
    case Strategy::web_fallback: return "web_fallback";
    case Strategy::agentic: return "agentic";
    case Strategy::iterative: return "iterative";
    case Strategy::aggregate: return "aggregate";
  }
  return "?";
}

std::string_view to_string(Route r) {
  switch (r) {
    case Route::local: return "local";
    case Route::web: return "web";
    case Route::zero_shot: return "zero_shot";
    case Route::null_answer: return "null_answer";
  }
  return "?";
}

std::string_view to_string(Confidence c) {
  switch (c) {
    case Confidence::high: return "high";
    case Confidence::medium: return "medium";
    case Confidence::low: return "low";
  }
  return "?";
}

std::string_view to_string(DecisionKind d) {
  switch (d) {
    case DecisionKind::majority: return "majority";
    case DecisionKind::unanimous: return "unanimous";
    case DecisionKind::tie: return "tie";
  }
  return "?";
}

std::string_view to_string(JudgeMode m) { return m == JudgeMode::oracle ? "oracle" : "self_check"; }

std::optional<Strategy> parse_strategy(std::string_view name) {
  for (auto s : {Strategy::zero_shot, Strategy::local_rag, Strategy::local_fallback, Strategy::web_fallback,
                 Strategy::agentic, Strategy::iterative, Strategy::aggregate}) {
    if (to_string(s) == name) return s;
  }
  return std::nullopt;
}

std::optional<JudgeMode> parse_judge_mode(std::string_view name) {
  if (name == "oracle") return JudgeMode::oracle;
  if (name == "self_check") return JudgeMode::self_check;
  return std::nullopt;
}

bool uses_local_index(Strategy s) { return s != Strategy::zero_shot && s != Strategy::web_fallback; }

bool uses_web(Strategy s) { return s == Strategy::web_fallback || s == Strategy::agentic; }

void AgenticConfig::validate() const {
  if (tau1 == 0 || tau2 == 0) throw std::invalid_argument("tau1 and tau2 must be positive");
  if (k_local <= 0) throw std::invalid_argument("agentic k_local must be positive");
}

void AggregateConfig::validate() const {
  if (k_values.empty()) throw std::invalid_argument("aggregate k_values must not be empty");
  for (std::size_t i = 0; i < k_values.size(); ++i) {
    if (k_values[i] <= 0) throw std::invalid_argument("aggregate k_values must be positive");
    if (i > 0 && k_values[i] <= k_values[i - 1]) {
      throw std::invalid_argument("aggregate k_values must be strictly increasing");
    }
  }
  if (std::find(k_values.begin(), k_values.end(), tiebreak_k) == k_values.end()) {
    throw std::invalid_argument("aggregate tiebreak_k must be one of k_values");
  }
  check_temperature(temperature, "aggregate temperature");
}

void IterativeConfig::validate() const {
  if (max_refinements < 0) throw std::invalid_argument("max_refinements must be >= 0");
}

void PipelineSettings::validate() const {
  if (model_id.empty()) throw std::invalid_argument("model_id must not be empty");
  check_temperature(temperature, "temperature");
  if (timeout_seconds <= 0) throw std::invalid_argument("timeout_seconds must be positive");
  if (k <= 0) throw std::invalid_argument("k must be positive");
  if (web.max_links <= 0 || web.pages_to_read <= 0 || web.max_page_chars == 0 || web.fetch_timeout.count() <= 0) {
    throw std::invalid_argument("web settings must be positive");
  }
  agentic.validate();
  aggregate.validate();
  iterative.validate();
}

ModelAnswer parse_model_answer(std::string_view text) {
  if (auto strict = parse_strict(text)) return *strict;
  if (auto salvaged = salvage(text)) return *salvaged;
  throw UnparsableAnswer("no option in reply: " + utf8::squeeze_whitespace(text.substr(0, 120)));
}

std::optional<bool> parse_yes_no(std::string_view text) {
  auto lower = [](char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; };
  auto word_at = [&](std::size_t i, std::string_view word) {
    if (i + word.size() > text.size()) return false;
    for (std::size_t j = 0; j < word.size(); ++j) {
      if (lower(text[i + j]) != word[j]) return false;
    }
    if (i > 0 && is_ascii_alnum(text[i - 1])) return false;
    const std::size_t end = i + word.size();
    return end == text.size() || !is_ascii_alnum(text[end]);
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (word_at(i, "yes")) return true;
    if (word_at(i, "no")) return false;
  }
  return std::nullopt;
}

Route route(bool router_says_yes, std::size_t local_chars, std::size_t web_chars, const AgenticConfig& cfg) {
  if (router_says_yes && local_chars > cfg.tau1) return Route::local;
  const bool web_allowed = !router_says_yes || cfg.yes_short_routes_to_web;
  if (web_allowed && web_chars > cfg.tau2) return Route::web;
  return Route::zero_shot;
}

AggregateDecision aggregate_votes(const std::vector<Vote>& votes, const AggregateConfig& cfg) {
  if (votes.size() != cfg.k_values.size()) throw std::logic_error("aggregate: expected one vote per k");
  std::vector<const Vote*> ordered;
  for (int k : cfg.k_values) {
    const Vote* found = nullptr;
    for (const auto& v : votes) {
      if (v.k != k) continue;
      if (found) throw std::logic_error("aggregate: two votes for k=" + std::to_string(k));
      found = &v;
    }
    if (!found) throw std::logic_error("aggregate: missing vote for k=" + std::to_string(k));
    if (!is_choice(found->option)) throw std::logic_error("aggregate: vote is not A-D");
    ordered.push_back(found);
  }

  std::array<std::size_t, 4> counts{};
  for (const auto* v : ordered) ++counts[slot(v->option)];
  const auto best = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  const std::size_t m = ordered.size();

  AggregateDecision out;
  if (counts[best] == m) {
    out.kind = DecisionKind::unanimous;
    out.option = kChoices[best];
  } else if (2 * counts[best] > m) {
    out.kind = DecisionKind::majority;
    out.option = kChoices[best];
  } else {
    out.kind = DecisionKind::tie;
    for (const auto* v : ordered) {
      if (v->k == cfg.tiebreak_k) out.option = v->option;
    }
  }
  for (const auto* v : ordered) {
    if (v->option == out.option) {
      out.rationale = v->rationale;
      break;
    }
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view question_id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : question_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(root_seed ^ splitmix64(h));
}

std::string rationale_language(const McqRecord& record) {
  bool bangla = utf8::contains_bengali(record.question);
  for (const auto& o : record.options) bangla = bangla || utf8::contains_bengali(o);
  return bangla ? "Bangla" : "English";
}

std::string format_options(const McqRecord& record) {
  std::string out;
  for (auto o : kChoices) {
    if (!out.empty()) out += '\n';
    out += std::string(to_string(o)) + ". " + record.option(o);
  }
  return out;
}

std::string format_context(const RetrievedContext& context) {
  std::string out;
  for (const auto& p : context.passages) {
    if (!out.empty()) out += "\n\n";
    out += "[" + std::to_string(p.rank) + "] (" + p.source + ")\n" + p.text;
  }
  return out;
}

Pipeline::Pipeline(ProviderHub& hub, const VectorIndex* index, PromptSet prompts, PipelineSettings settings)
    : hub_(hub), index_(index), prompts_(std::move(prompts)), settings_(std::move(settings)) {
  settings_.validate();
}

Prediction Pipeline::start(const McqRecord& record, Strategy strategy) const {
  Prediction p;
  p.question_id = record.id;
  p.strategy = strategy;
  return p;
}

ChatRequest Pipeline::build_prompt(const McqRecord& record, const RetrievedContext* context,
                                   Strategy strategy) const {
  const bool has_context = context != nullptr && !context->empty();
  std::string name = "zero_shot";
  if (has_context) {
    if (context->origin == ContextOrigin::web) {
      name = "web_fallback";
    } else {
      name = strategy == Strategy::zero_shot || strategy == Strategy::web_fallback ? "local_rag"
                                                                                   : std::string(to_string(strategy));
    }
  }
  std::map<std::string, std::string> vars{{"question", record.question},
                                          {"options", format_options(record)},
                                          {"language", rationale_language(record)}};
  if (has_context) vars["context"] = format_context(*context);

  ChatRequest req;
  req.messages = prompts_.messages(name, vars);
  req.model_id = settings_.model_id;
  req.temperature = settings_.temperature;
  req.timeout_seconds = settings_.timeout_seconds;
  req.purpose = "answer";
  req.subject = record.id;
  return req;
}

Pipeline::Answered Pipeline::ask(ChatRequest req, std::vector<TraceEntry>& trace) {
  Answered out;
  for (int round = 0; round < 2; ++round) {
    if (round == 1) req.messages.push_back({ChatRole::user, std::string(kJsonReminder)});
    try {
      const auto reply = hub_.chat_complete(req);
      out.attempts += reply.attempts;
      const auto parsed = parse_model_answer(reply.text);
      out.option = parsed.option;
      out.rationale = utf8::trim(parsed.rationale);
      return out;
    } catch (const UnparsableAnswer& e) {
      trace.push_back(note(std::string("unparsable answer: ") + e.what()));
    } catch (const ProviderUnavailable& e) {
      out.attempts += e.attempts();
      out.outage = true;
      trace.push_back(note(std::string("chat unavailable: ") + e.what()));
      return out;
    }
  }
  out.option = Option::failed;
  return out;
}

RetrievedContext Pipeline::retrieve_local(std::string_view query, int k, std::vector<TraceEntry>& trace) {
  RetrievedContext ctx;
  ctx.k_requested = k;
  if (index_ != nullptr && !index_->empty()) {
    try {
      ctx = retrieve(*index_, query, k, hub_);
    } catch (const ProviderError& e) {
      trace.push_back(note(std::string("local retrieval failed: ") + e.what()));
    } catch (const IndexError& e) {
      trace.push_back(note(std::string("local retrieval failed: ") + e.what()));
    }
  }
  trace.push_back({"local", k_ref(k), ctx.total_chars});
  return ctx;
}

RetrievedContext Pipeline::gather_web(const McqRecord& record, std::vector<TraceEntry>& trace) {
  RetrievedContext ctx;
  ctx.origin = ContextOrigin::web;
  std::string query = record.question;
  for (const auto& o : record.options) query += " " + o;

  std::vector<SearchResult> hits;
  try {
    hits = hub_.web_search(query, settings_.web.max_links);
  } catch (const ProviderError& e) {
    trace.push_back(note(std::string("web search failed: ") + e.what()));
    return ctx;
  }
  if (hits.empty()) {
    trace.push_back(note("web search returned no results"));
    return ctx;
  }

  std::vector<std::string> pages;
  const auto n = std::min<std::size_t>(hits.size(), static_cast<std::size_t>(settings_.web.pages_to_read));
  for (std::size_t i = 0; i < n; ++i) {
    std::string text;
    try {
      text = truncate_chars(hub_.fetch_and_extract(hits[i].url, settings_.web.fetch_timeout),
                            settings_.web.max_page_chars);
    } catch (const ProviderError& e) {
      trace.push_back(note(std::string("fetch failed: ") + e.what()));
    } catch (const std::invalid_argument& e) {
      trace.push_back(note(std::string("fetch skipped: ") + e.what()));
    }
    trace.push_back({"web", hits[i].url, utf8::length(text)});
    pages.push_back(std::move(text));
  }

  std::string summary = summarize_web(pages, record, trace);
  if (!summary.empty()) ctx.add(Passage{"web summary", std::move(summary), 0.0, 1});
  return ctx;
}

std::string Pipeline::summarize_web(const std::vector<std::string>& pages, const McqRecord& record,
                                    std::vector<TraceEntry>& trace) {
  std::string joined;
  int n = 0;
  for (const auto& page : pages) {
    if (utf8::trim(page).empty()) continue;
    if (!joined.empty()) joined += '\n';
    joined += "[Page " + std::to_string(++n) + "]\n" + page;
  }
  if (n == 0) return {};

  ChatRequest req;
  req.messages = prompts_.messages("summarizer", {{"question", record.question},
                                                  {"options", format_options(record)},
                                                  {"language", rationale_language(record)},
                                                  {"pages", joined}});
  req.model_id = settings_.model_id;
  req.temperature = settings_.temperature;
  req.timeout_seconds = settings_.timeout_seconds;
  req.purpose = "summarize";
  req.subject = record.id;
  try {
    std::string summary = utf8::trim(hub_.chat_complete(req).text);
    trace.push_back({"summary", "web summary", utf8::length(summary)});
    return summary;
  } catch (const ProviderError& e) {
    trace.push_back(note(std::string("summarizer failed: ") + e.what()));
    return {};
  }
}

std::string Pipeline::refine_query(const std::string& question, const RetrievedContext& context,
                                   std::vector<TraceEntry>& trace, const std::string& subject) {
  ChatRequest req;
  req.messages = prompts_.messages("extractor", {{"question", question}, {"context", format_context(context)}});
  req.model_id = settings_.model_id;
  req.temperature = settings_.temperature;
  req.timeout_seconds = settings_.timeout_seconds;
  req.purpose = "extract_terms";
  req.subject = subject;
  std::vector<std::string> terms;
  try {
    terms = split_terms(hub_.chat_complete(req).text);
  } catch (const ProviderError& e) {
    trace.push_back(note(std::string("term extraction failed: ") + e.what()));
    return question;
  }
  if (terms.empty()) {
    trace.push_back(note("term extraction returned nothing"));
    return question;
  }
  std::string refined = question;
  for (const auto& t : terms) refined += " " + t;
  return refined;
}

void Pipeline::answer_from(Prediction& p, const McqRecord& record, const RetrievedContext* context, Route r) {
  const auto answered = ask(build_prompt(record, context, p.strategy), p.retrieval_trace);
  p.option = answered.option;
  p.rationale = answered.rationale;
  p.attempts += answered.attempts;
  p.provider_outage = answered.outage;
  p.route = r;
}

Prediction Pipeline::answer_zero_shot(const McqRecord& record) {
  auto p = start(record, Strategy::zero_shot);
  answer_from(p, record, nullptr, Route::zero_shot);
  return p;
}

Prediction Pipeline::answer_local_rag(const McqRecord& record) {
  auto p = start(record, Strategy::local_rag);
  const auto ctx = retrieve_local(record.question, settings_.k, p.retrieval_trace);
  if (ctx.total_chars > settings_.agentic.tau1) {
    answer_from(p, record, &ctx, Route::local);
  } else {
    p.option = Option::NA;
    p.rationale = std::string(kNullAnswerPhrase);
    p.route = Route::null_answer;
  }
  return p;
}

Prediction Pipeline::answer_local_fallback(const McqRecord& record) {
  auto p = start(record, Strategy::local_fallback);
  const auto ctx = retrieve_local(record.question, settings_.k, p.retrieval_trace);
  if (ctx.total_chars > settings_.agentic.tau1) {
    answer_from(p, record, &ctx, Route::local);
  } else {
    answer_from(p, record, nullptr, Route::zero_shot);
  }
  return p;
}

Prediction Pipeline::answer_web_fallback(const McqRecord& record) {
  auto p = start(record, Strategy::web_fallback);
  const auto ctx = gather_web(record, p.retrieval_trace);
  if (ctx.total_chars > settings_.agentic.tau2) {
    answer_from(p, record, &ctx, Route::web);
  } else {
    answer_from(p, record, nullptr, Route::zero_shot);
  }
  return p;
}

Prediction Pipeline::answer_agentic(const McqRecord& record) {
  const auto& cfg = settings_.agentic;
  auto p = start(record, Strategy::agentic);
  const auto local = retrieve_local(record.question, cfg.k_local, p.retrieval_trace);

  ChatRequest req;
  req.messages = prompts_.messages("router", {{"question", record.question},
                                              {"options", format_options(record)},
                                              {"context", format_context(local)}});
  req.model_id = cfg.router_model.empty() ? settings_.model_id : cfg.router_model;
  req.temperature = 0.0;
  req.timeout_seconds = settings_.timeout_seconds;
  req.purpose = "router";
  req.subject = record.id;
  bool yes = false;
  try {
    const auto verdict = parse_yes_no(hub_.chat_complete(req).text);
    if (!verdict) p.retrieval_trace.push_back(note("router reply had no yes/no; treated as No"));
    yes = verdict.value_or(false);
  } catch (const ProviderError& e) {
    p.retrieval_trace.push_back(note(std::string("router unavailable; treated as No: ") + e.what()));
  }
  p.retrieval_trace.push_back({"router", yes ? "Yes" : "No", 0});

  RetrievedContext web;
  const bool local_taken = yes && local.total_chars > cfg.tau1;
  if (!local_taken && (!yes || cfg.yes_short_routes_to_web)) web = gather_web(record, p.retrieval_trace);

  switch (route(yes, local.total_chars, web.total_chars, cfg)) {
    case Route::local:
      answer_from(p, record, &local, Route::local);
      break;
    case Route::web:
      answer_from(p, record, &web, Route::web);
      break;
    default:
      answer_from(p, record, nullptr, Route::zero_shot);
  }
  return p;
}

bool Pipeline::judge(const McqRecord& record, const Answered& answered, std::vector<TraceEntry>& trace) {
  bool correct = false;
  if (!is_choice(answered.option)) {
    correct = false;
  } else if (settings_.iterative.judge_mode == JudgeMode::oracle) {
    correct = answered.option == record.answer_key;
  } else {
    ChatRequest req;
    req.messages = prompts_.messages("verifier", {{"question", record.question},
                                                  {"options", format_options(record)},
                                                  {"answer", std::string(to_string(answered.option))},
                                                  {"rationale", answered.rationale}});
    req.model_id = settings_.model_id;
    req.temperature = 0.0;
    req.timeout_seconds = settings_.timeout_seconds;
    req.purpose = "verify";
    req.subject = record.id;
    try {
      correct = parse_yes_no(hub_.chat_complete(req).text).value_or(false);
    } catch (const ProviderError& e) {
      trace.push_back(note(std::string("verifier failed: ") + e.what()));
    }
  }
  trace.push_back({"judge", correct ? "correct" : "incorrect", 0});
  return correct;
}

Prediction Pipeline::answer_iterative(const McqRecord& record) {
  const auto& cfg = settings_.iterative;
  auto p = start(record, Strategy::iterative);
  auto ctx = retrieve_local(record.question, settings_.k, p.retrieval_trace);
  const int max_attempts = 1 + cfg.max_refinements;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    if (attempt > 1) {
      const auto query = refine_query(record.question, ctx, p.retrieval_trace, record.id);
      ctx = retrieve_local(query, settings_.k, p.retrieval_trace);
    }
    const bool has_context = !ctx.empty();
    const auto answered = ask(build_prompt(record, has_context ? &ctx : nullptr, Strategy::iterative),
                              p.retrieval_trace);
    p.option = answered.option;
    p.rationale = answered.rationale;
    p.route = has_context ? Route::local : Route::zero_shot;
    p.attempts = attempt;
    if (answered.outage) {
      p.provider_outage = true;
      p.confidence = Confidence::low;
      return p;
    }
    if (judge(record, answered, p.retrieval_trace)) {
      p.confidence = attempt == 1 ? Confidence::high : Confidence::medium;
      return p;
    }
  }
  p.confidence = Confidence::low;
  return p;
}

Prediction Pipeline::answer_aggregate(const McqRecord& record, std::uint64_t seed) {
  const auto& cfg = settings_.aggregate;
  auto p = start(record, Strategy::aggregate);
  std::mt19937_64 rng(seed);
  std::vector<Vote> votes;
  bool any_context = false;
  for (int k : cfg.k_values) {
    const auto ctx = retrieve_local(record.question, k, p.retrieval_trace);
    any_context = any_context || !ctx.empty();
    auto req = build_prompt(record, ctx.empty() ? nullptr : &ctx, Strategy::aggregate);
    req.temperature = cfg.temperature;
    auto answered = ask(std::move(req), p.retrieval_trace);
    p.attempts += answered.attempts;
    if (answered.outage) {
      p.provider_outage = true;
      p.option = Option::failed;
      return p;
    }
    if (!is_choice(answered.option)) {
      answered.option = kChoices[rng() % kChoices.size()];
      p.retrieval_trace.push_back(
          note(k_ref(k) + " vote unparsable; drew " + std::string(to_string(answered.option))));
    }
    p.retrieval_trace.push_back({"vote", k_ref(k) + ":" + std::string(to_string(answered.option)), 0});
    votes.push_back({k, answered.option, std::move(answered.rationale)});
  }
  const auto decision = aggregate_votes(votes, cfg);
  p.option = decision.option;
  p.decision_kind = decision.kind;
  p.rationale = decision.rationale;
  p.route = any_context ? Route::local : Route::zero_shot;
  return p;
}

Prediction Pipeline::answer(Strategy strategy, const McqRecord& record, std::uint64_t seed) {
  switch (strategy) {
    case Strategy::zero_shot: return answer_zero_shot(record);
    case Strategy::local_rag: return answer_local_rag(record);
    case Strategy::local_fallback: return answer_local_fallback(record);
    case Strategy::web_fallback: return answer_web_fallback(record);
    case Strategy::agentic: return answer_agentic(record);
    case Strategy::iterative: return answer_iterative(record);
    case Strategy::aggregate: return answer_aggregate(record, seed);
  }
  throw std::logic_error("unknown strategy");
}

}  // namespace mcqrag

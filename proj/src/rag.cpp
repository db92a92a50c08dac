#include "carbonopt/rag.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "carbonopt/hash.hpp"

namespace carbonopt::rag {

using nlohmann::json;

std::string chunk_id_for(std::string_view doc_id, std::size_t start) {
  Fnv1a h;
  h.update(doc_id).update(std::string_view("\0", 1)).update(static_cast<std::uint64_t>(start));
  return h.hex();
}

std::vector<KnowledgeChunk> chunk_document(const std::string& doc_id, const std::string& text,
                                           std::size_t chunk_size, std::size_t chunk_overlap) {
  if (chunk_size == 0 || chunk_overlap >= chunk_size) {
    throw RagError("chunk_overlap (" + std::to_string(chunk_overlap) + ") must be smaller than chunk_size (" +
                   std::to_string(chunk_size) + ")");
  }
  if (text.empty()) throw RagError("document '" + doc_id + "' is empty");

  const std::size_t stride = chunk_size - chunk_overlap;
  std::vector<KnowledgeChunk> out;
  for (std::size_t start = 0; start == 0 || start + chunk_overlap < text.size(); start += stride) {
    const std::size_t end = std::min(start + chunk_size, text.size());
    out.push_back({chunk_id_for(doc_id, start), doc_id, text.substr(start, end - start), start, end});
  }
  return out;
}

std::vector<Document> load_corpus(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw RagError("corpus directory not found: " + root.string());
  std::vector<Document> docs;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    if (buf.str().empty()) continue;
    docs.push_back({fs::relative(entry.path(), root).generic_string(), buf.str()});
  }
  std::sort(docs.begin(), docs.end(), [](const Document& a, const Document& b) { return a.doc_id < b.doc_id; });
  return docs;
}

std::vector<KnowledgeChunk> chunk_corpus(const std::vector<Document>& docs, std::size_t chunk_size,
                                         std::size_t chunk_overlap) {
  std::vector<KnowledgeChunk> out;
  for (const auto& d : docs) {
    auto chunks = chunk_document(d.doc_id, d.text, chunk_size, chunk_overlap);
    out.insert(out.end(), std::make_move_iterator(chunks.begin()), std::make_move_iterator(chunks.end()));
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (cur.size() >= 2) tokens.push_back(cur);
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

double dot(const SparseVector& a, const SparseVector& b) {
  double s = 0.0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (i->first < j->first) {
      ++i;
    } else if (j->first < i->first) {
      ++j;
    } else {
      s += i->second * j->second;
      ++i;
      ++j;
    }
  }
  return s;
}

namespace {

SparseVector normalized(SparseVector v) {
  double sq = 0.0;
  for (const auto& [_, w] : v) sq += w * w;
  if (sq == 0.0) return {};
  const double norm = std::sqrt(sq);
  for (auto& [_, w] : v) w /= norm;
  return v;
}

SparseVector tfidf(const std::vector<std::string>& tokens, const std::map<std::string, std::size_t>& vocabulary,
                   const std::vector<double>& idf) {
  std::map<std::size_t, double> tf;
  for (const auto& t : tokens) {
    const auto it = vocabulary.find(t);
    if (it != vocabulary.end()) tf[it->second] += 1.0;
  }
  SparseVector v;
  v.reserve(tf.size());
  for (const auto& [i, count] : tf) v.emplace_back(i, count * idf[i]);
  return normalized(std::move(v));
}

json chunk_to_json(const KnowledgeChunk& c) {
  return {{"chunk_id", c.chunk_id}, {"doc_id", c.doc_id}, {"start", c.start}, {"end", c.end}, {"text", c.text}};
}

}  // namespace

ChunkIndex ChunkIndex::build(std::vector<KnowledgeChunk> chunks) {
  if (chunks.empty()) throw RagError("cannot index an empty chunk list");

  std::set<std::string> ids;
  std::vector<std::vector<std::string>> tokens;
  tokens.reserve(chunks.size());
  std::map<std::string, std::size_t> df;
  for (const auto& c : chunks) {
    if (!ids.insert(c.chunk_id).second) throw RagError("duplicate chunk id " + c.chunk_id);
    tokens.push_back(tokenize(c.text));
    for (const auto& t : std::set<std::string>(tokens.back().begin(), tokens.back().end())) ++df[t];
  }
  if (df.empty()) throw RagError("no indexable terms in any chunk");

  ChunkIndex index;
  const double n = static_cast<double>(chunks.size());
  for (const auto& [term, count] : df) {
    index.vocabulary_.emplace(term, index.terms_.size());
    index.terms_.push_back(term);
    index.idf_.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0);
  }
  for (const auto& t : tokens) index.vectors_.push_back(tfidf(t, index.vocabulary_, index.idf_));
  index.chunks_ = std::move(chunks);
  return index;
}

SparseVector ChunkIndex::embed(std::string_view text) const { return tfidf(tokenize(text), vocabulary_, idf_); }

double ChunkIndex::idf(std::string_view term) const {
  const auto it = vocabulary_.find(std::string(term));
  if (it == vocabulary_.end()) throw RagError("term not in vocabulary: " + std::string(term));
  return idf_[it->second];
}

const KnowledgeChunk& ChunkIndex::chunk(std::string_view chunk_id) const {
  for (const auto& c : chunks_)
    if (c.chunk_id == chunk_id) return c;
  throw RagError("unknown chunk id " + std::string(chunk_id));
}

void ChunkIndex::save(const std::filesystem::path& path) const {
  json j;
  j["format"] = "carbonopt-chunk-index";
  j["version"] = kFormatVersion;
  j["chunks"] = json::array();
  for (const auto& c : chunks_) j["chunks"].push_back(chunk_to_json(c));
  j["terms"] = terms_;
  j["idf"] = idf_;
  j["vectors"] = json::array();
  for (const auto& v : vectors_) {
    json row = json::array();
    for (const auto& [i, w] : v) row.push_back({i, w});
    j["vectors"].push_back(std::move(row));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RagError("cannot write index to " + path.string());
  out << j.dump() << '\n';
}

ChunkIndex ChunkIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RagError("cannot read index " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw RagError("malformed index " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "carbonopt-chunk-index") throw RagError("not a chunk index: " + path.string());
  if (j.value("version", 0) != kFormatVersion) {
    throw RagError("unsupported index version " + j["version"].dump() + " in " + path.string());
  }
  ChunkIndex index;
  for (const auto& c : j.at("chunks")) {
    index.chunks_.push_back({c.at("chunk_id").get<std::string>(), c.at("doc_id").get<std::string>(),
                             c.at("text").get<std::string>(), c.at("start").get<std::size_t>(),
                             c.at("end").get<std::size_t>()});
  }
  index.terms_ = j.at("terms").get<std::vector<std::string>>();
  index.idf_ = j.at("idf").get<std::vector<double>>();
  if (index.terms_.size() != index.idf_.size()) throw RagError("index terms and idf differ in length");
  for (std::size_t i = 0; i < index.terms_.size(); ++i) index.vocabulary_.emplace(index.terms_[i], i);
  for (const auto& row : j.at("vectors")) {
    SparseVector v;
    for (const auto& e : row) v.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<double>());
    index.vectors_.push_back(std::move(v));
  }
  if (index.vectors_.size() != index.chunks_.size()) throw RagError("index vectors and chunks differ in length");
  return index;
}

std::vector<RetrievalResult> retrieve(const ChunkIndex& index, std::string_view query, std::size_t k) {
  if (k == 0) throw RagError("k must be at least 1");
  const SparseVector q = index.embed(query);
  if (q.empty()) return {};

  std::vector<RetrievalResult> all;
  all.reserve(index.chunks().size());
  for (std::size_t i = 0; i < index.chunks().size(); ++i) {
    all.push_back({index.chunks()[i].chunk_id, dot(q, index.vectors()[i])});
  }
  const auto better = [](const RetrievalResult& a, const RetrievalResult& b) {
    return a.score != b.score ? a.score > b.score : a.chunk_id < b.chunk_id;
  };
  const std::size_t n = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), better);
  all.resize(n);
  return all;
}

// ---------------------------------------------------------------------------

namespace {

json record_to_json(const MemoryRecord& r) {
  json vec = json::array();
  for (const auto& [term, w] : r.request_vector) vec.push_back({term, w});
  return {{"sequence", r.sequence}, {"timestamp", r.timestamp}, {"request", r.request},
          {"response", r.response}, {"request_vector", vec}};
}

MemoryRecord record_from_json(const json& j) {
  MemoryRecord r;
  r.sequence = j.at("sequence").get<std::uint64_t>();
  r.timestamp = j.at("timestamp").get<std::string>();
  r.request = j.at("request").get<std::string>();
  r.response = j.at("response").get<std::string>();
  for (const auto& e : j.at("request_vector")) r.request_vector.emplace_back(e.at(0).get<std::string>(), e.at(1).get<double>());
  return r;
}

std::vector<std::pair<std::string, double>> term_vector(const ChunkIndex& index, std::string_view text) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [i, w] : index.embed(text)) out.emplace_back(index.terms()[i], w);
  std::sort(out.begin(), out.end());
  return out;
}

double term_dot(const std::vector<std::pair<std::string, double>>& a,
                const std::vector<std::pair<std::string, double>>& b) {
  double s = 0.0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (i->first < j->first) {
      ++i;
    } else if (j->first < i->first) {
      ++j;
    } else {
      s += i->second * j->second;
      ++i;
      ++j;
    }
  }
  return s;
}

}  // namespace

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

MemoryRepository::MemoryRepository() : clock_(utc_timestamp) {}

MemoryRepository::MemoryRepository(std::filesystem::path path, Clock clock)
    : path_(std::move(path)), clock_(clock ? std::move(clock) : Clock(utc_timestamp)) {
  std::ifstream in(path_);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records_.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw RagError(path_.string() + ":" + std::to_string(line_no) + ": malformed memory record: " + e.what());
    }
  }
}

const MemoryRecord& MemoryRepository::record(const ChunkIndex& index, std::string request, std::string response) {
  MemoryRecord r;
  r.request_vector = term_vector(index, request);
  r.request = std::move(request);
  r.response = std::move(response);
  r.timestamp = clock_();

  std::lock_guard lock(mutex_);
  r.sequence = records_.size();
  if (!path_.empty()) {
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw RagError("cannot append to memory repository " + path_.string());
    out << record_to_json(r).dump() << '\n';
    out.flush();
    if (!out) throw RagError("write failed for memory repository " + path_.string());
  }
  records_.push_back(std::move(r));
  return records_.back();
}

std::vector<MemoryRecord> MemoryRepository::recall(const ChunkIndex& index, std::string_view request,
                                                   std::size_t m) const {
  if (m == 0) return {};
  const auto q = term_vector(index, request);
  std::vector<std::pair<double, const MemoryRecord*>> scored;
  std::lock_guard lock(mutex_);
  for (const auto& r : records_) {
    const double s = term_dot(q, r.request_vector);
    if (s > 0.0) scored.emplace_back(s, &r);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second->sequence > b.second->sequence;
  });
  std::vector<MemoryRecord> out;
  for (std::size_t i = 0; i < std::min(m, scored.size()); ++i) out.push_back(*scored[i].second);
  return out;
}

std::vector<MemoryRecord> MemoryRepository::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

std::size_t MemoryRepository::size() const {
  std::lock_guard lock(mutex_);
  return records_.size();
}

// ---------------------------------------------------------------------------

std::size_t token_count(std::string_view text) { return (text.size() + 3) / 4; }

const char* const kDefaultPreamble =
    "You are a network optimization assistant for mobile edge computing systems that serve "
    "AI-generated content. Using the reference material and earlier formulations provided, turn the "
    "designer's request into a precise optimization problem: state the decision variables with units and "
    "bounds, the objective (carbon emissions in grams unless told otherwise), every constraint including "
    "latency limits, and the parameters you assumed. Cite the sources you relied on by their labels.";

std::string chunk_block(const RetrievedChunk& chunk) {
  char score[32];
  std::snprintf(score, sizeof score, "%.4f", chunk.score);
  return "[source: " + chunk.doc_id + " #" + chunk.chunk_id + " score " + score + "]\n" + chunk.text + "\n\n";
}

std::string memory_block(const MemoryRecord& record) {
  return "[earlier request " + std::to_string(record.sequence) + "]\n" + record.request + "\n[earlier response]\n" +
         record.response + "\n\n";
}

std::string PromptContext::user_message() const {
  std::string out;
  for (const auto& c : retrieved) out += chunk_block(c);
  for (const auto& m : memory_entries) out += memory_block(m);
  out += designer_request;
  return out;
}

std::size_t PromptContext::total_tokens() const {
  std::size_t n = token_count(system_preamble) + token_count(designer_request);
  for (const auto& c : retrieved) n += token_count(chunk_block(c));
  for (const auto& m : memory_entries) n += token_count(memory_block(m));
  return n;
}

PromptContext assemble_prompt(const std::string& request, const std::vector<RetrievalResult>& results,
                              const ChunkIndex& index, const std::vector<MemoryRecord>& memory, std::size_t budget,
                              const std::string& preamble) {
  const std::size_t base = token_count(preamble) + token_count(request);
  if (budget <= base) {
    throw RagError("token budget " + std::to_string(budget) + " does not exceed the " + std::to_string(base) +
                   " tokens needed for the preamble and request");
  }
  PromptContext ctx{preamble, {}, {}, request, budget};
  std::size_t used = base;
  for (const auto& r : results) {
    const KnowledgeChunk& c = index.chunk(r.chunk_id);
    RetrievedChunk rc{c.chunk_id, c.doc_id, r.score, c.text};
    const std::size_t cost = token_count(chunk_block(rc));
    if (used + cost > budget) continue;
    used += cost;
    ctx.retrieved.push_back(std::move(rc));
  }
  std::vector<const MemoryRecord*> recent;
  for (const auto& m : memory) recent.push_back(&m);
  std::stable_sort(recent.begin(), recent.end(),
                   [](const MemoryRecord* a, const MemoryRecord* b) { return a->sequence > b->sequence; });
  for (const MemoryRecord* m : recent) {
    const std::size_t cost = token_count(memory_block(*m));
    if (used + cost > budget) continue;
    used += cost;
    ctx.memory_entries.push_back(*m);
  }
  return ctx;
}

}  // namespace carbonopt::rag

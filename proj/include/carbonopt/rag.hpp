#pragma once

// Retrieval-augmented prompt construction: character chunking, a tf-idf
// vector index with cosine retrieval, token-budgeted prompt assembly and an
// append-only memory of earlier request/response pairs.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace carbonopt::rag {

class RagError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kDefaultChunkSize = 1000;
inline constexpr std::size_t kDefaultChunkOverlap = 200;
inline constexpr std::size_t kDefaultTopK = 4;
inline constexpr std::size_t kDefaultTokenBudget = 4000;

struct KnowledgeChunk {
  std::string chunk_id;
  std::string doc_id;
  std::string text;
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
};

std::string chunk_id_for(std::string_view doc_id, std::size_t start);

std::vector<KnowledgeChunk> chunk_document(const std::string& doc_id, const std::string& text,
                                           std::size_t chunk_size = kDefaultChunkSize,
                                           std::size_t chunk_overlap = kDefaultChunkOverlap);

struct Document {
  std::string doc_id;  // path relative to the corpus root, '/' separated
  std::string text;
};

/// Every regular *.txt file below `root`, sorted by doc_id. Empty files are skipped.
std::vector<Document> load_corpus(const std::filesystem::path& root);

std::vector<KnowledgeChunk> chunk_corpus(const std::vector<Document>& docs,
                                         std::size_t chunk_size = kDefaultChunkSize,
                                         std::size_t chunk_overlap = kDefaultChunkOverlap);

/// Lowercased alphanumeric runs of length >= 2 (ASCII).
std::vector<std::string> tokenize(std::string_view text);

/// Sorted by term index, no duplicates, no zero weights.
using SparseVector = std::vector<std::pair<std::size_t, double>>;

double dot(const SparseVector& a, const SparseVector& b);

struct RetrievalResult {
  std::string chunk_id;
  double score = 0.0;
};

class ChunkIndex {
 public:
  static constexpr int kFormatVersion = 1;

  static ChunkIndex build(std::vector<KnowledgeChunk> chunks);

  /// Unit-norm tf-idf vector of `text` over this vocabulary; empty when no
  /// term of `text` is known.
  SparseVector embed(std::string_view text) const;

  const std::vector<KnowledgeChunk>& chunks() const { return chunks_; }
  const std::vector<SparseVector>& vectors() const { return vectors_; }
  const std::map<std::string, std::size_t>& vocabulary() const { return vocabulary_; }
  const std::vector<std::string>& terms() const { return terms_; }
  const std::vector<double>& idf() const { return idf_; }
  double idf(std::string_view term) const;

  const KnowledgeChunk& chunk(std::string_view chunk_id) const;

  void save(const std::filesystem::path& path) const;
  static ChunkIndex load(const std::filesystem::path& path);

 private:
  std::vector<KnowledgeChunk> chunks_;
  std::map<std::string, std::size_t> vocabulary_;
  std::vector<std::string> terms_;
  std::vector<double> idf_;
  std::vector<SparseVector> vectors_;
};

/// Top-k chunks by cosine similarity, ordered by (score desc, chunk_id asc).
std::vector<RetrievalResult> retrieve(const ChunkIndex& index, std::string_view query,
                                      std::size_t k = kDefaultTopK);

struct MemoryRecord {
  std::uint64_t sequence = 0;  // position in the repository, 0-based
  std::string request;
  std::string response;
  std::string timestamp;  // ISO-8601 UTC
  std::vector<std::pair<std::string, double>> request_vector;  // term -> weight, sorted by term
};

class MemoryRepository {
 public:
  using Clock = std::function<std::string()>;

  /// In-memory repository.
  MemoryRepository();
  /// JSON-lines file; existing records are loaded, new ones appended.
  explicit MemoryRepository(std::filesystem::path path, Clock clock = {});

  const MemoryRecord& record(const ChunkIndex& index, std::string request, std::string response);

  /// The m most similar earlier requests with positive cosine similarity,
  /// ordered by (similarity desc, sequence desc).
  std::vector<MemoryRecord> recall(const ChunkIndex& index, std::string_view request, std::size_t m) const;

  std::vector<MemoryRecord> records() const;
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  Clock clock_;
  mutable std::mutex mutex_;
  std::vector<MemoryRecord> records_;
};

std::string utc_timestamp();

/// ceil(characters / 4)
std::size_t token_count(std::string_view text);

extern const char* const kDefaultPreamble;

struct RetrievedChunk {
  std::string chunk_id;
  std::string doc_id;
  double score = 0.0;
  std::string text;
};

std::string chunk_block(const RetrievedChunk& chunk);
std::string memory_block(const MemoryRecord& record);

struct PromptContext {
  std::string system_preamble;
  std::vector<RetrievedChunk> retrieved;
  std::vector<MemoryRecord> memory_entries;
  std::string designer_request;
  std::size_t token_budget = kDefaultTokenBudget;

  /// Retrieved blocks, then memory blocks, then the request.
  std::string user_message() const;
  /// Sum of the counted parts: preamble, each block, request.
  std::size_t total_tokens() const;
};

/// Fills the budget greedily: retrieved chunks in rank order, then memory
/// entries from most recent, each only if it still fits.
PromptContext assemble_prompt(const std::string& request, const std::vector<RetrievalResult>& results,
                              const ChunkIndex& index, const std::vector<MemoryRecord>& memory,
                              std::size_t budget = kDefaultTokenBudget,
                              const std::string& preamble = kDefaultPreamble);

}  // namespace carbonopt::rag

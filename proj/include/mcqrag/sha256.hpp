#pragma once

#include <string>
#include <string_view>

namespace mcqrag {

/// Incremental SHA-256 producing a lowercase hex digest.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  /// Feeds a length-prefixed field so that ("ab","c") and ("a","bc") differ.
  Sha256& field(std::string_view bytes);
  Sha256& update(std::string_view bytes);
  std::string hex_digest();

 private:
  void* ctx_;
};

std::string sha256_hex(std::string_view bytes);

}  // namespace mcqrag

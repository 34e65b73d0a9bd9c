#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

#include "mcqrag/providers.hpp"

namespace mcqrag {

/// A template file holds an optional system part, a line of exactly "---",
/// then the user part. Without the separator the whole file is the user part.
/// Placeholders are written {{name}}.
struct PromptTemplate {
  std::string system;
  std::string user;

  static PromptTemplate parse(std::string_view text);
};

/// Replaces every {{name}} found in `vars`; unknown placeholders stay as-is.
std::string render(std::string_view text, const std::map<std::string, std::string>& vars);

class PromptError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PromptSet {
 public:
  /// The templates shipped with the library.
  static PromptSet builtin();
  /// Built-in templates overridden by any <name>.txt found in `dir`.
  static PromptSet with_overrides(const std::filesystem::path& dir);

  const PromptTemplate& get(const std::string& name) const;
  bool contains(const std::string& name) const { return templates_.count(name) > 0; }

  /// Renders template `name` into chat messages.
  std::vector<ChatMessage> messages(const std::string& name, const std::map<std::string, std::string>& vars) const;

  /// Hash over every template, recorded in run manifests.
  std::string digest() const;

 private:
  std::map<std::string, PromptTemplate> templates_;
};

}  // namespace mcqrag

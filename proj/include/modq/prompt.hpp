#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace modq {

inline constexpr std::size_t kDefaultTokenBudget = 8192;
inline constexpr std::size_t kFewShotViolative = 3;
inline constexpr std::size_t kFewShotNonViolative = 2;
inline constexpr std::size_t kFewShotSize = kFewShotViolative + kFewShotNonViolative;

struct PolicyClause {
  int index = 0;  // 1-based
  std::string text;

  friend bool operator==(const PolicyClause&, const PolicyClause&) = default;
};

/// A named policy with ordered natural-language clauses. `name` excludes the
/// trailing " Policy" that the prompt delimiters add.
struct Policy {
  std::string name;
  std::vector<PolicyClause> clauses;

  /// Numbers clauses 1..n in order.
  static Policy from_clauses(std::string name, const std::vector<std::string>& clause_texts);

  /// Throws EmptyPolicy on an empty name or no clauses, InvalidArgument on
  /// non-contiguous indices or multi-line clause text.
  void validate() const;

  friend bool operator==(const Policy&, const Policy&) = default;
};

/// `{ "name": string, "clauses": [string, ...] }`
Policy policy_from_json(const nlohmann::json& j);
nlohmann::json policy_to_json(const Policy& policy);
Policy load_policy(const std::filesystem::path& path);

struct FewShotExample {
  std::string comment_text;
  bool violative = false;
  std::optional<std::vector<std::string>> keywords;

  friend bool operator==(const FewShotExample&, const FewShotExample&) = default;
};

enum class PromptKind { ZeroShot, FewShot, FewShotKeywords, MultiPolicy };

std::string_view prompt_kind_name(PromptKind kind) noexcept;
std::optional<PromptKind> parse_prompt_kind(std::string_view name) noexcept;

struct PromptVariant {
  PromptKind kind = PromptKind::ZeroShot;
  std::vector<FewShotExample> examples;  // empty for ZeroShot / MultiPolicy
};

struct RenderedPrompt {
  std::string text;
  std::size_t char_count = 0;  // UTF-8 code points in text
  std::size_t token_budget = kDefaultTokenBudget;
  std::size_t clause_count = 0;
  std::vector<std::string> warnings;

  /// ceil(char_count / 4); a budgeting heuristic, not a tokenizer.
  std::size_t estimated_tokens() const noexcept { return (char_count + 3) / 4; }
  bool over_budget() const noexcept { return estimated_tokens() > token_budget; }
};

struct RenderOptions {
  std::size_t token_budget = kDefaultTokenBudget;
  // Label-noise experiments render examples whose answers no longer follow
  // the 3 violative + 2 non-violative layout; turning this off skips the mix
  // and keyword checks (the count check always applies).
  bool strict_example_mix = true;
};

/// Output-format primer prepended to zero-shot prompts.
const Policy& primer_policy();
std::string_view primer_comment();

RenderedPrompt render_zero_shot(const Policy& policy, std::string_view comment,
                                const RenderOptions& options = {});

/// Exactly five examples, three violative then two non-violative.
RenderedPrompt render_few_shot(const Policy& policy, std::span<const FewShotExample> examples,
                               std::string_view comment, bool with_keywords,
                               const RenderOptions& options = {});

/// All policy blocks in order under one combined question.
RenderedPrompt render_multi_policy(std::span<const Policy> policies, std::string_view comment,
                                   const RenderOptions& options = {});

/// Dispatches on variant.kind. Single-policy kinds use policies.front().
RenderedPrompt render(const PromptVariant& variant, std::span<const Policy> policies,
                      std::string_view comment, const RenderOptions& options = {});

/// Number of UTF-8 code points (continuation bytes are not counted).
std::size_t utf8_length(std::string_view text) noexcept;

}  // namespace modq

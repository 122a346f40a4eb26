#include "modq/prompt.hpp"

#include <fstream>

#include "modq/error.hpp"

namespace modq {
namespace {

constexpr std::string_view kQuestionPrefix =
    "Question: You are an expert content moderator. Does the following comment violate ";
constexpr std::string_view kSeparator = "----";

void append_policy_block(std::string& out, const Policy& policy) {
  out += '<';
  out += policy.name;
  out += " Policy>\n";
  for (const auto& clause : policy.clauses) {
    out += std::to_string(clause.index);
    out += ") ";
    out += clause.text;
    out += '\n';
  }
  out += "</";
  out += policy.name;
  out += " Policy>\n";
}

void append_comment(std::string& out, std::string_view comment) {
  out += "Comment: \"";
  out += comment;
  out += "\"\n";
}

void append_primer(std::string& out) {
  append_policy_block(out, primer_policy());
  out += '\n';
  out += kQuestionPrefix;
  out += "the ";
  out += primer_policy().name;
  out += " Policy?\n";
  append_comment(out, primer_comment());
  out += "Answer: Yes\n";
}

std::string join_keywords(const std::vector<std::string>& keywords) {
  std::string line;
  for (std::size_t i = 0; i < keywords.size(); ++i) {
    if (i > 0) line += " | ";
    line += keywords[i];
  }
  return line;
}

RenderedPrompt finish(std::string text, std::size_t clause_count, const RenderOptions& options) {
  RenderedPrompt prompt;
  prompt.char_count = utf8_length(text);
  prompt.text = std::move(text);
  prompt.token_budget = options.token_budget;
  prompt.clause_count = clause_count;
  if (prompt.over_budget()) {
    prompt.warnings.push_back("estimated " + std::to_string(prompt.estimated_tokens()) +
                              " tokens exceeds budget of " + std::to_string(options.token_budget));
  }
  return prompt;
}

void require_comment(std::string_view comment) {
  if (comment.empty()) throw Error(Errc::EmptyComment, "comment under evaluation is empty");
}

void validate_keywords(const std::vector<std::string>& keywords) {
  for (const auto& keyword : keywords) {
    if (keyword.empty() || keyword.find('|') != std::string::npos ||
        keyword.find('\n') != std::string::npos) {
      throw Error(Errc::InvalidArgument, "keyword '" + keyword + "' is empty or contains '|'");
    }
  }
}

}  // namespace

std::size_t utf8_length(std::string_view text) noexcept {
  std::size_t n = 0;
  for (char c : text) {
    if ((static_cast<unsigned char>(c) & 0xC0) != 0x80) ++n;
  }
  return n;
}

Policy Policy::from_clauses(std::string name, const std::vector<std::string>& clause_texts) {
  Policy policy;
  policy.name = std::move(name);
  policy.clauses.reserve(clause_texts.size());
  int index = 1;
  for (const auto& text : clause_texts) policy.clauses.push_back({index++, text});
  return policy;
}

void Policy::validate() const {
  if (name.empty()) throw Error(Errc::EmptyPolicy, "policy name is empty");
  if (clauses.empty()) throw Error(Errc::EmptyPolicy, "policy '" + name + "' has no clauses");
  for (std::size_t i = 0; i < clauses.size(); ++i) {
    if (clauses[i].index != static_cast<int>(i) + 1) {
      throw Error(Errc::InvalidArgument, "policy '" + name + "' clause indices are not 1..n");
    }
    if (clauses[i].text.empty() || clauses[i].text.find('\n') != std::string::npos) {
      throw Error(Errc::InvalidArgument,
                  "policy '" + name + "' clause " + std::to_string(i + 1) + " is empty or multi-line");
    }
  }
}

Policy policy_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("name") || !j.contains("clauses") ||
      !j["name"].is_string() || !j["clauses"].is_array()) {
    throw Error(Errc::InvalidArgument, "policy JSON needs a string 'name' and array 'clauses'");
  }
  std::vector<std::string> texts;
  for (const auto& c : j["clauses"]) {
    if (!c.is_string()) throw Error(Errc::InvalidArgument, "policy clauses must be strings");
    texts.push_back(c.get<std::string>());
  }
  Policy policy = Policy::from_clauses(j["name"].get<std::string>(), texts);
  policy.validate();
  return policy;
}

nlohmann::json policy_to_json(const Policy& policy) {
  nlohmann::json clauses = nlohmann::json::array();
  for (const auto& c : policy.clauses) clauses.push_back(c.text);
  return {{"name", policy.name}, {"clauses", std::move(clauses)}};
}

Policy load_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::InvalidArgument, "cannot open policy file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, path.string() + ": " + e.what());
  }
  return policy_from_json(j);
}

std::string_view prompt_kind_name(PromptKind kind) noexcept {
  switch (kind) {
    case PromptKind::ZeroShot: return "zero_shot";
    case PromptKind::FewShot: return "few_shot";
    case PromptKind::FewShotKeywords: return "few_shot_keywords";
    case PromptKind::MultiPolicy: return "multi_policy";
  }
  return "zero_shot";
}

std::optional<PromptKind> parse_prompt_kind(std::string_view name) noexcept {
  for (auto kind : {PromptKind::ZeroShot, PromptKind::FewShot, PromptKind::FewShotKeywords,
                    PromptKind::MultiPolicy}) {
    if (prompt_kind_name(kind) == name) return kind;
  }
  return std::nullopt;
}

const Policy& primer_policy() {
  static const Policy policy = Policy::from_clauses(
      "Dangerous or Illegal",
      {
          "Comments should not discuss minors drinking alcohol, using vaporizers, e-cigarettes, "
          "tobacco or marijuana.",
          "Comments should not discuss bomb making.",
          "Comments should not discuss how to to kill or harm others.",
          "Comments should not discuss how to steal goods or promote dishonest behavior.",
      });
  return policy;
}

std::string_view primer_comment() {
  return "How to make a pipe bomb. You will need duct tape, alcohol, matches, a fuse, and black "
         "powder.";
}

RenderedPrompt render_zero_shot(const Policy& policy, std::string_view comment,
                                const RenderOptions& options) {
  policy.validate();
  require_comment(comment);
  std::string out;
  append_primer(out);
  out += '\n';
  append_policy_block(out, policy);
  out += '\n';
  out += kQuestionPrefix;
  out += "the " + policy.name + " Policy?\n";
  append_comment(out, comment);
  out += "Answer:";
  return finish(std::move(out), policy.clauses.size(), options);
}

RenderedPrompt render_few_shot(const Policy& policy, std::span<const FewShotExample> examples,
                               std::string_view comment, bool with_keywords,
                               const RenderOptions& options) {
  policy.validate();
  require_comment(comment);
  if (examples.size() != kFewShotSize) {
    throw Error(Errc::WrongExampleCount,
                "expected 5 examples, got " + std::to_string(examples.size()));
  }
  if (options.strict_example_mix) {
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const bool want_violative = i < kFewShotViolative;
      if (examples[i].violative != want_violative) {
        throw Error(Errc::WrongExampleMix,
                    "examples must be 3 violative followed by 2 non-violative");
      }
      if (with_keywords && want_violative &&
          (!examples[i].keywords || examples[i].keywords->empty())) {
        throw Error(Errc::MissingKeywords,
                    "violative example " + std::to_string(i + 1) + " has no keywords");
      }
    }
  }

  std::string out;
  append_policy_block(out, policy);
  out += '\n';
  out += kQuestionPrefix;
  out += "the " + policy.name + " Policy?\n";
  out += '\n';
  for (const auto& example : examples) {
    append_comment(out, example.comment_text);
    out += example.violative ? "Answer: Yes\n" : "Answer: No\n";
    if (with_keywords && example.violative && example.keywords && !example.keywords->empty()) {
      validate_keywords(*example.keywords);
      out += "Keywords: " + join_keywords(*example.keywords) + "\n";
    }
    out += kSeparator;
    out += '\n';
  }
  append_comment(out, comment);
  out += "Answer:";
  return finish(std::move(out), policy.clauses.size(), options);
}

RenderedPrompt render_multi_policy(std::span<const Policy> policies, std::string_view comment,
                                   const RenderOptions& options) {
  if (policies.size() < 2) {
    throw Error(Errc::TooFewPolicies, "multi-policy prompts need at least two policies");
  }
  require_comment(comment);
  std::string out;
  append_primer(out);
  out += '\n';
  std::size_t clauses = 0;
  for (const auto& policy : policies) {
    policy.validate();
    append_policy_block(out, policy);
    out += '\n';
    clauses += policy.clauses.size();
  }
  out += kQuestionPrefix;
  out += "any of the above policies?\n";
  append_comment(out, comment);
  out += "Answer:";
  return finish(std::move(out), clauses, options);
}

RenderedPrompt render(const PromptVariant& variant, std::span<const Policy> policies,
                      std::string_view comment, const RenderOptions& options) {
  if (policies.empty()) throw Error(Errc::EmptyPolicy, "no policy to render");
  switch (variant.kind) {
    case PromptKind::ZeroShot:
      return render_zero_shot(policies.front(), comment, options);
    case PromptKind::FewShot:
      return render_few_shot(policies.front(), variant.examples, comment, false, options);
    case PromptKind::FewShotKeywords:
      return render_few_shot(policies.front(), variant.examples, comment, true, options);
    case PromptKind::MultiPolicy:
      return render_multi_policy(policies, comment, options);
  }
  throw Error(Errc::InvalidArgument, "unknown prompt kind");
}

}  // namespace modq

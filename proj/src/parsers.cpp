#include "editloop/parsers.hpp"

#include <cmath>
#include <json.hpp>
#include <optional>

#include "editloop/errors.hpp"
#include "editloop/text.hpp"

namespace editloop {

namespace {

using nlohmann::json;

bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

void append_utf8(std::string& out, unsigned cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

// Quoted string at text[i] == '"'. Advances i past the closing quote.
std::optional<std::string> scan_quoted(std::string_view text, std::size_t& i) {
  std::string out;
  for (++i; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '"') {
      ++i;
      return out;
    }
    if (c != '\\') {
      out += c;
      continue;
    }
    if (++i >= text.size()) return std::nullopt;
    switch (text[i]) {
      case '"':
        out += '"';
        break;
      case '\\':
        out += '\\';
        break;
      case '/':
        out += '/';
        break;
      case 'n':
        out += '\n';
        break;
      case 't':
        out += '\t';
        break;
      case 'r':
        out += '\r';
        break;
      case 'u': {
        if (i + 4 >= text.size()) return std::nullopt;
        unsigned cp = 0;
        for (int k = 1; k <= 4; ++k) {
          const char h = text[i + k];
          cp <<= 4;
          if (h >= '0' && h <= '9') cp |= h - '0';
          else if (h >= 'a' && h <= 'f') cp |= h - 'a' + 10;
          else if (h >= 'A' && h <= 'F') cp |= h - 'A' + 10;
          else return std::nullopt;
        }
        append_utf8(out, cp);
        i += 4;
        break;
      }
      default:
        return std::nullopt;
    }
  }
  return std::nullopt;
}

// Attempts a string array starting at text[start] == '['.
std::optional<std::vector<std::string>> try_array_at(std::string_view text, std::size_t start) {
  std::vector<std::string> items;
  std::size_t i = start + 1;
  auto skip_ws = [&] {
    while (i < text.size() && is_ws(text[i])) ++i;
  };
  skip_ws();
  if (i < text.size() && text[i] == ']') return items;
  while (true) {
    skip_ws();
    if (i >= text.size() || text[i] != '"') return std::nullopt;
    auto item = scan_quoted(text, i);
    if (!item) return std::nullopt;
    items.push_back(std::move(*item));
    skip_ws();
    if (i >= text.size()) return std::nullopt;
    if (text[i] == ']') return items;
    if (text[i] != ',') return std::nullopt;
    ++i;
  }
}

// Balanced {...} starting at text[start], string-aware; returns its length.
std::optional<std::size_t> balanced_object(std::string_view text, std::size_t start) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = start; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return i - start + 1;
  }
  return std::nullopt;
}

// First JSON object in the text for which `accept` returns true. Objects that
// parse but are rejected are skipped; `last_reason` keeps the latest reason.
template <typename Accept>
std::optional<json> find_object(std::string_view text, Accept accept, std::string& last_reason) {
  for (std::size_t pos = text.find('{'); pos != std::string_view::npos;
       pos = text.find('{', pos + 1)) {
    auto len = balanced_object(text, pos);
    if (!len) continue;
    json obj = json::parse(text.substr(pos, *len), nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) continue;
    if (accept(obj, last_reason)) return obj;
  }
  return std::nullopt;
}

std::optional<double> as_number(const json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const std::string s(trim(v.get<std::string>()));
    if (s.empty()) return std::nullopt;
    std::size_t used = 0;
    try {
      const double d = std::stod(s, &used);
      if (used == s.size()) return d;
    } catch (const std::exception&) {
    }
  }
  return std::nullopt;
}

}  // namespace

std::vector<std::string> parse_string_array(std::string_view text) {
  for (std::size_t pos = text.find('['); pos != std::string_view::npos;
       pos = text.find('[', pos + 1)) {
    auto items = try_array_at(text, pos);
    if (!items) continue;
    for (std::size_t k = 0; k < items->size(); ++k) {
      if (trim((*items)[k]).empty())
        throw ParseFailure("array element " + std::to_string(k) + " is empty");
    }
    return *items;
  }
  throw ParseFailure("no well-formed string array in reply");
}

std::string serialize_string_array(const std::vector<std::string>& items) {
  std::string out = "[";
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (k) out += ", ";
    out += '"';
    for (char c : items[k]) {
      if (c == '"' || c == '\\') out += '\\';
      if (c == '\n') {
        out += "\\n";
        continue;
      }
      out += c;
    }
    out += '"';
  }
  out += ']';
  return out;
}

Critique parse_critique(std::string_view text) {
  std::string reason = "no JSON object in reply";
  auto obj = find_object(
      text,
      [](const json& o, std::string& why) {
        for (const char* key : {"score", "negative_prompt", "positive_prompt"}) {
          if (!o.contains(key)) {
            why = std::string("object lacks '") + key + "'";
            return false;
          }
        }
        if (!as_number(o["score"])) {
          why = "score is not numeric";
          return false;
        }
        for (const char* key : {"negative_prompt", "positive_prompt"}) {
          if (!o[key].is_string() && !o[key].is_null()) {
            why = std::string("'") + key + "' is not text";
            return false;
          }
        }
        return true;
      },
      reason);
  if (!obj) throw ParseFailure(reason);

  Critique c;
  double score = *as_number((*obj)["score"]);
  if (std::isnan(score)) throw ParseFailure("score is NaN");
  if (score < 0.0 || score > 10.0) {
    score = std::clamp(score, 0.0, 10.0);
    c.clamped = true;
  }
  c.score = score;
  auto text_of = [&](const char* key) {
    const json& v = (*obj)[key];
    return v.is_string() ? v.get<std::string>() : std::string();
  };
  c.negative = text_of("negative_prompt");
  if (iequals(trim(c.negative), "none")) c.negative.clear();
  c.positive = text_of("positive_prompt");
  return c;
}

std::string parse_consensus_text(std::string_view text) {
  std::string reason = "no JSON object in reply";
  auto obj = find_object(
      text,
      [](const json& o, std::string& why) {
        if (!o.contains("prompt") || !o["prompt"].is_string()) {
          why = "object lacks a text 'prompt'";
          return false;
        }
        return true;
      },
      reason);
  if (!obj) throw ParseFailure(reason);
  return (*obj)["prompt"].get<std::string>();
}

}  // namespace editloop

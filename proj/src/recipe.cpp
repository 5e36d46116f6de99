#include "ptq/recipe.hpp"

#include <cctype>
#include <cstdlib>
#include <sstream>

#include "ptq/error.hpp"

namespace ptq {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string gamma_text(float g) {
  std::ostringstream os;
  os << g;
  return os.str();
}

float parse_gamma(const std::string& s, const std::string& token) {
  char* end = nullptr;
  const float g = std::strtof(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw ConfigError("bad gamma in recipe step '" + token + "'");
  if (g != 0.5f && g != 0.75f) throw ConfigError("TR gamma must be 0.5 or 0.75 (got '" + s + "')");
  return g;
}

// "X(init=Y)" -> Y, "X w/ Y init." -> Y, "X" -> "".
bool split_init(const std::string& token, const std::string& head, std::string& init) {
  if (token == head) {
    init.clear();
    return true;
  }
  const std::string paren = head + "(init=";
  if (token.rfind(paren, 0) == 0 && token.back() == ')') {
    init = trim(token.substr(paren.size(), token.size() - paren.size() - 1));
    return true;
  }
  const std::string alias = head + " w/ ";
  if (token.rfind(alias, 0) == 0) {
    std::string rest = trim(token.substr(alias.size()));
    for (const char* suffix : {" init.", " init"}) {
      const std::string sfx(suffix);
      if (rest.size() > sfx.size() && rest.compare(rest.size() - sfx.size(), sfx.size(), sfx) == 0) {
        init = trim(rest.substr(0, rest.size() - sfx.size()));
        return true;
      }
    }
  }
  return false;
}

}  // namespace

std::string render(const TransformStep& t) {
  switch (t.kind) {
    case TransformKind::TR:
      return "TR(" + gamma_text(t.gamma) + ")";
    case TransformKind::TS_v1:
      return "TS-v1";
    case TransformKind::TS_v2:
      return "TS-v2";
    case TransformKind::TL:
      switch (t.init) {
        case ScaleInit::ones:
          return "TL(init=ones)";
        case ScaleInit::TR:
          return "TL(init=TR(" + gamma_text(t.gamma) + "))";
        case ScaleInit::TS_v1:
          return "TL(init=TS-v1)";
      }
  }
  return "?";
}

std::string render(const ClipStep& c) {
  if (c.kind == ClipKind::CL) return c.init == ClipInit::CS_asym ? "CL(init=CS-asym)" : "CL(init=minmax)";
  return to_string(c.kind);
}

std::string Recipe::render() const {
  std::string out;
  auto add = [&](const std::string& s) { out += (out.empty() ? "" : "+") + s; };
  if (transform) add(ptq::render(*transform));
  if (clip) add(ptq::render(*clip));
  if (reconstruct) add("RH");
  return out;
}

Recipe Recipe::parse(const std::string& text, bool force) {
  Recipe r;
  int stage = 0;  // 1 transform, 2 clip, 3 reconstruction
  std::size_t pos = 0;
  const std::string body = trim(text);
  if (body.empty()) return r;
  while (pos <= body.size()) {
    // '+' separates steps except inside parentheses.
    std::size_t end = pos;
    int depth = 0;
    while (end < body.size() && (body[end] != '+' || depth > 0)) {
      if (body[end] == '(') ++depth;
      if (body[end] == ')') --depth;
      ++end;
    }
    const std::string tok = trim(body.substr(pos, end - pos));
    pos = end + 1;
    if (tok.empty()) throw ConfigError("empty step in recipe '" + text + "'");

    int this_stage = 0;
    std::string init;
    if (tok == "TS-v1" || tok == "TS-v2") {
      r.transform = TransformStep{tok == "TS-v1" ? TransformKind::TS_v1 : TransformKind::TS_v2};
      this_stage = 1;
    } else if (tok.rfind("TR(", 0) == 0 && tok.back() == ')') {
      r.transform = TransformStep{TransformKind::TR, parse_gamma(tok.substr(3, tok.size() - 4), tok)};
      this_stage = 1;
    } else if (split_init(tok, "TL", init)) {
      TransformStep t{TransformKind::TL};
      if (init.empty() || init == "ones") {
        t.init = ScaleInit::ones;
      } else if (init == "TS-v1") {
        t.init = ScaleInit::TS_v1;
      } else if (init.rfind("TR(", 0) == 0 && init.back() == ')') {
        t.init = ScaleInit::TR;
        t.gamma = parse_gamma(init.substr(3, init.size() - 4), tok);
      } else {
        throw ConfigError("TL init must be ones, TR(gamma) or TS-v1 (got '" + init + "')");
      }
      r.transform = t;
      this_stage = 1;
    } else if (tok == "CM" || tok == "CS-sym" || tok == "CS-asym") {
      r.clip = ClipStep{tok == "CM" ? ClipKind::CM : tok == "CS-sym" ? ClipKind::CS_sym : ClipKind::CS_asym};
      this_stage = 2;
    } else if (split_init(tok, "CL", init)) {
      ClipStep c{ClipKind::CL};
      if (init.empty() || init == "minmax" || init == "CM") {
        c.init = ClipInit::minmax;
      } else if (init == "CS-asym") {
        c.init = ClipInit::CS_asym;
      } else {
        throw ConfigError("CL init must be minmax or CS-asym (got '" + init + "')");
      }
      r.clip = c;
      this_stage = 2;
    } else if (tok == "RH") {
      if (r.reconstruct) throw ConfigError("recipe has more than one reconstruction step");
      r.reconstruct = true;
      this_stage = 3;
    } else {
      throw ConfigError("unknown recipe step '" + tok + "'");
    }
    if (this_stage == stage) {
      throw ConfigError(std::string("recipe has more than one ") + (stage == 1 ? "transform" : "clip") + " step");
    }
    if (this_stage < stage) {
      throw ConfigError("recipe steps must be ordered transform, clip, reconstruction ('" + tok + "' is out of place)");
    }
    stage = this_stage;
  }
  if (r.reconstruct && r.clip && (r.clip->kind == ClipKind::CS_sym || r.clip->kind == ClipKind::CS_asym) && !force) {
    throw ConfigError("RH after " + ptq::render(*r.clip) +
                      " is refused: pre-reconstruction clipping tends to hurt; set force to run it anyway");
  }
  return r;
}

}  // namespace ptq

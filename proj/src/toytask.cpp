#include "diffro/toytask.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace diffro::toy {

namespace {

constexpr std::array<std::string_view, kNumEmotions> kEmotionNames{"neutral", "happy",
                                                                   "sad", "angry"};
constexpr std::array<std::string_view, kNumGenders> kGenderNames{"female", "male"};

}  // namespace

std::string_view to_string(Emotion e) { return kEmotionNames.at(static_cast<int>(e)); }
std::string_view to_string(Gender g) { return kGenderNames.at(static_cast<int>(g)); }

Emotion parse_emotion(std::string_view s) {
  for (int i = 0; i < kNumEmotions; ++i) {
    if (kEmotionNames[i] == s) return static_cast<Emotion>(i);
  }
  throw std::invalid_argument("unknown emotion '" + std::string(s) + "'");
}

Gender parse_gender(std::string_view s) {
  for (int i = 0; i < kNumGenders; ++i) {
    if (kGenderNames[i] == s) return static_cast<Gender>(i);
  }
  throw std::invalid_argument("unknown gender '" + std::string(s) + "'");
}

void AttributeSet::validate() const {
  if (quality < 1 || quality > kNumQuality) {
    throw std::invalid_argument("quality level " + std::to_string(quality) +
                                " outside 1..5");
  }
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw std::invalid_argument("rate " + std::to_string(rate) + " outside [0, 1]");
  }
}

std::vector<int> TextSeq::instr_ids() const {
  std::vector<int> ids;
  if (emotion_instr) ids.push_back(kEmotionInstrBase + static_cast<int>(*emotion_instr));
  if (quality_instr) ids.push_back(kQualityInstrBase + *quality_instr - 1);
  return ids;
}

void TextSeq::validate() const {
  if (symbols.size() > kMaxTextLen) {
    throw std::invalid_argument("text length " + std::to_string(symbols.size()) +
                                " exceeds " + std::to_string(kMaxTextLen));
  }
  for (int s : symbols) {
    if (s < 0 || s >= kAlphabet) {
      throw std::invalid_argument("text symbol id " + std::to_string(s) +
                                  " outside the alphabet");
    }
  }
  if (quality_instr && (*quality_instr < 1 || *quality_instr > kNumQuality)) {
    throw std::invalid_argument("quality instruction " + std::to_string(*quality_instr) +
                                " outside 1..5");
  }
}

TextSeq TextSeq::from_string(std::string_view text) {
  TextSeq t;
  for (char c : text) {
    if (c == ' ') {
      t.symbols.push_back(26);
    } else if (c >= 'a' && c <= 'z') {
      t.symbols.push_back(c - 'a');
    } else {
      throw std::invalid_argument(std::string("character '") + c +
                                  "' is not in the toy alphabet");
    }
  }
  return t;
}

std::string TextSeq::str() const {
  std::string s;
  for (int id : symbols) s.push_back(id == 26 ? ' ' : static_cast<char>('a' + id));
  return s;
}

Codebook::Codebook(std::uint64_t seed) : seed_(seed) {
  for (int i = 0; i < 2 * kAlphabet; ++i) forward_[i] = i;
  Rng rng(seed, stream_id("codebook"));
  for (int i = 2 * kAlphabet - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i) + 1));
    std::swap(forward_[i], forward_[j]);
  }
  for (int i = 0; i < 2 * kAlphabet; ++i) inverse_[forward_[i]] = i;
}

int Codebook::content(int symbol, Gender variant) const {
  if (symbol < 0 || symbol >= kAlphabet) {
    throw std::out_of_range("symbol " + std::to_string(symbol) + " has no content token");
  }
  return kContentBase + forward_[2 * symbol + static_cast<int>(variant)];
}

std::pair<int, Gender> Codebook::symbol_of(int content_id) const {
  if (classify(content_id) != TokenClass::content) {
    throw std::out_of_range("token " + std::to_string(content_id) + " is not content");
  }
  const int slot = inverse_[content_id - kContentBase];
  return {slot / 2, static_cast<Gender>(slot % 2)};
}

TokenClass Codebook::classify(int id) {
  if (id >= kContentBase && id < kStyleBase) return TokenClass::content;
  if (id >= kStyleBase && id < kNoiseBase) return TokenClass::style;
  if (id >= kNoiseBase && id < kEventBase) return TokenClass::noise;
  if (id >= kEventBase && id < kEos) return TokenClass::event;
  if (id == kEos) return TokenClass::eos;
  return TokenClass::reserved;
}

nlohmann::ordered_json Codebook::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed_;
  j["content"] = std::vector<int>(forward_.begin(), forward_.end());
  return j;
}

Codebook Codebook::from_json(const nlohmann::json& j) {
  Codebook cb(j.at("seed").get<std::uint64_t>());
  if (j.contains("content") &&
      j.at("content").get<std::vector<int>>() !=
          std::vector<int>(cb.forward_.begin(), cb.forward_.end())) {
    throw std::invalid_argument("codebook table does not match its seed");
  }
  return cb;
}

TokenSeq encode(const TextSeq& text, const AttributeSet& attrs,
                const Codebook& codebook, Rng& rng) {
  text.validate();
  attrs.validate();
  if (text.symbols.empty() && !text.emotion_instr && !text.quality_instr) {
    throw std::invalid_argument("encode: empty text without an instruction");
  }
  std::vector<int> real;
  const int style_base = kStyleBase + 2 * static_cast<int>(attrs.emotion);
  for (std::size_t i = 0; i < text.symbols.size(); ++i) {
    const int c = codebook.content(text.symbols[i], attrs.gender);
    real.push_back(c);
    if (rng.bernoulli(1.0 - attrs.rate)) real.push_back(c);
    if ((i + 1) % 3 == 0) {
      real.push_back(style_base + static_cast<int>(rng.uniform_int(2)));
    }
  }
  if (attrs.events.laugh) real.push_back(kEventBase + static_cast<int>(rng.uniform_int(2)));
  if (attrs.events.breath) {
    real.push_back(kEventBase + 2 + static_cast<int>(rng.uniform_int(2)));
  }
  // Each output position before EOS is noise with probability r.
  const double r = 0.05 * (kNumQuality - attrs.quality);
  TokenSeq out;
  for (int tok : real) {
    while (rng.bernoulli(r)) out.push_back(kNoiseBase + static_cast<int>(rng.uniform_int(4)));
    out.push_back(tok);
  }
  out.push_back(kEos);
  if (out.size() > kMaxTokens) {
    throw std::length_error("encode: " + std::to_string(out.size()) +
                            " tokens exceed the maximum of " + std::to_string(kMaxTokens));
  }
  return out;
}

DecodeResult oracle_decode(std::span<const int> tokens, const Codebook& codebook) {
  DecodeResult out;
  std::array<int, kNumEmotions> style_votes{};
  std::array<int, kNumGenders> gender_votes{};
  std::size_t body = 0, noisy = 0, duplicates = 0;
  int last_symbol = -1;
  for (int id : tokens) {
    const TokenClass cls = Codebook::classify(id);
    if (cls == TokenClass::eos) break;
    ++body;
    switch (cls) {
      case TokenClass::content: {
        const auto [sym, variant] = codebook.symbol_of(id);
        ++gender_votes[static_cast<int>(variant)];
        if (sym == last_symbol) {
          ++duplicates;
        } else {
          out.text.symbols.push_back(sym);
          last_symbol = sym;
        }
        break;
      }
      case TokenClass::style: ++style_votes[(id - kStyleBase) / 2]; break;
      case TokenClass::event:
        if (id < kEventBase + 2) {
          out.attrs.events.laugh = true;
        } else {
          out.attrs.events.breath = true;
        }
        break;
      case TokenClass::noise:
      case TokenClass::reserved:
      default: ++noisy; break;
    }
  }
  const auto best_style = std::ranges::max_element(style_votes);
  out.attrs.emotion = *best_style > 0
                          ? static_cast<Emotion>(best_style - style_votes.begin())
                          : Emotion::neutral;
  out.attrs.gender =
      gender_votes[1] > gender_votes[0] ? Gender::male : Gender::female;
  out.noise_fraction = body ? static_cast<double>(noisy) / static_cast<double>(body) : 0.0;
  out.attrs.quality = static_cast<int>(
      std::clamp(std::round(5.0 - out.noise_fraction / 0.05), 1.0, 5.0));
  const auto n = out.text.symbols.size();
  out.attrs.rate =
      n ? std::clamp(1.0 - static_cast<double>(duplicates) / static_cast<double>(n), 0.0, 1.0)
        : 1.0;
  return out;
}

std::vector<int> random_text(std::size_t len, Rng& rng) {
  std::vector<int> s;
  s.reserve(len);
  while (s.size() < len) {
    const auto c = static_cast<int>(rng.uniform_int(kAlphabet));
    if (!s.empty() && s.back() == c) continue;
    s.push_back(c);
  }
  return s;
}

DatasetConfig DatasetConfig::from_json(const nlohmann::json& j) {
  DatasetConfig c;
  auto mode = [](const std::string& s) {
    if (s == "none") return InstrMode::none;
    if (s == "random") return InstrMode::random;
    if (s == "match") return InstrMode::match;
    throw std::invalid_argument("instruction mode '" + s + "' is not none|random|match");
  };
  c.min_len = j.value("min_len", c.min_len);
  c.max_len = j.value("max_len", c.max_len);
  c.codebook_seed = j.value("codebook_seed", c.codebook_seed);
  if (j.contains("emotion_instr")) c.emotion_instr = mode(j.at("emotion_instr"));
  if (j.contains("quality_instr")) c.quality_instr = mode(j.at("quality_instr"));
  if (j.contains("quality_target")) c.quality_target = j.at("quality_target").get<int>();
  if (j.contains("pin_emotion")) c.pin_emotion = parse_emotion(j.at("pin_emotion").get<std::string>());
  if (j.contains("pin_gender")) c.pin_gender = parse_gender(j.at("pin_gender").get<std::string>());
  if (j.contains("pin_quality")) c.pin_quality = j.at("pin_quality").get<int>();
  if (j.contains("pin_rate")) c.pin_rate = j.at("pin_rate").get<double>();
  if (j.contains("pin_events")) {
    c.pin_events = Events{j.at("pin_events").value("laugh", false),
                          j.at("pin_events").value("breath", false)};
  }
  if (c.min_len < 1 || c.min_len > c.max_len || c.max_len > kMaxTextLen) {
    throw std::invalid_argument("text length range [" + std::to_string(c.min_len) + ", " +
                                std::to_string(c.max_len) + "] invalid");
  }
  return c;
}

std::vector<Utterance> make_dataset(std::size_t n, std::string_view split,
                                    const DatasetConfig& cfg, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("make_dataset: n must be >= 1");
  if (cfg.min_len < 1 || cfg.min_len > cfg.max_len || cfg.max_len > kMaxTextLen) {
    throw std::invalid_argument("make_dataset: bad text length range");
  }
  const Codebook codebook(cfg.codebook_seed);
  const Rng base(seed, stream_id(std::string("split:") + std::string(split)));
  std::vector<Utterance> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = base.split(i);
    Utterance u;
    const std::size_t len = cfg.min_len + rng.uniform_int(cfg.max_len - cfg.min_len + 1);
    u.text.symbols = random_text(len, rng);
    auto& a = u.attrs;
    a.emotion = static_cast<Emotion>(rng.uniform_int(kNumEmotions));
    a.gender = static_cast<Gender>(rng.uniform_int(kNumGenders));
    a.quality = 1 + static_cast<int>(rng.uniform_int(kNumQuality));
    a.rate = rng.uniform();
    a.events.laugh = rng.bernoulli(0.5);
    a.events.breath = rng.bernoulli(0.5);
    if (cfg.pin_emotion) a.emotion = *cfg.pin_emotion;
    if (cfg.pin_gender) a.gender = *cfg.pin_gender;
    if (cfg.pin_quality) a.quality = *cfg.pin_quality;
    if (cfg.pin_rate) a.rate = *cfg.pin_rate;
    if (cfg.pin_events) a.events = *cfg.pin_events;
    switch (cfg.emotion_instr) {
      case InstrMode::none: break;
      case InstrMode::random:
        u.text.emotion_instr = static_cast<Emotion>(rng.uniform_int(kNumEmotions));
        break;
      case InstrMode::match: u.text.emotion_instr = a.emotion; break;
    }
    switch (cfg.quality_instr) {
      case InstrMode::none: break;
      case InstrMode::random:
        u.text.quality_instr = 1 + static_cast<int>(rng.uniform_int(kNumQuality));
        break;
      case InstrMode::match: u.text.quality_instr = cfg.quality_target.value_or(a.quality); break;
    }
    // Rare noise bursts can overflow the token budget; redraw the channels.
    for (int attempt = 0;; ++attempt) {
      try {
        u.tokens = encode(u.text, u.attrs, codebook, rng);
        break;
      } catch (const std::length_error&) {
        if (attempt == 100) throw;
      }
    }
    out.push_back(std::move(u));
  }
  return out;
}

nlohmann::ordered_json to_json(const Utterance& u) {
  nlohmann::ordered_json j;
  j["text"] = u.text.symbols;
  j["instr"] = u.text.instr_ids();
  nlohmann::ordered_json a;
  a["emotion"] = to_string(u.attrs.emotion);
  a["gender"] = to_string(u.attrs.gender);
  a["quality"] = u.attrs.quality;
  a["rate"] = u.attrs.rate;
  a["events"] = {{"laugh", u.attrs.events.laugh}, {"breath", u.attrs.events.breath}};
  j["attrs"] = a;
  j["tokens"] = u.tokens;
  return j;
}

namespace {

TextSeq text_from_json(const nlohmann::json& j) {
  TextSeq t;
  t.symbols = j.at("text").get<std::vector<int>>();
  for (int id : j.value("instr", std::vector<int>{})) {
    if (id >= kEmotionInstrBase && id < kQualityInstrBase) {
      t.emotion_instr = static_cast<Emotion>(id - kEmotionInstrBase);
    } else if (id >= kQualityInstrBase && id < kTextVocab) {
      t.quality_instr = id - kQualityInstrBase + 1;
    } else {
      throw std::invalid_argument("instruction id " + std::to_string(id) + " unknown");
    }
  }
  t.validate();
  return t;
}

}  // namespace

Utterance utterance_from_json(const nlohmann::json& j) {
  Utterance u;
  u.text = text_from_json(j);
  const auto& a = j.at("attrs");
  u.attrs.emotion = parse_emotion(a.at("emotion").get<std::string>());
  u.attrs.gender = parse_gender(a.at("gender").get<std::string>());
  u.attrs.quality = a.at("quality").get<int>();
  u.attrs.rate = a.at("rate").get<double>();
  u.attrs.events.laugh = a.at("events").at("laugh").get<bool>();
  u.attrs.events.breath = a.at("events").at("breath").get<bool>();
  u.attrs.validate();
  u.tokens = j.at("tokens").get<TokenSeq>();
  return u;
}

void write_jsonl(const std::filesystem::path& path, std::span<const Utterance> utts) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& u : utts) os << to_json(u).dump() << '\n';
  if (!os) throw std::runtime_error("write to " + path.string() + " failed");
}

namespace {

template <typename F>
void for_each_line(const std::filesystem::path& path, F f) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      f(nlohmann::json::parse(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

std::vector<Utterance> read_jsonl(const std::filesystem::path& path) {
  std::vector<Utterance> out;
  for_each_line(path, [&](const nlohmann::json& j) { out.push_back(utterance_from_json(j)); });
  return out;
}

std::vector<TextSeq> read_texts(const std::filesystem::path& path) {
  std::vector<TextSeq> out;
  for_each_line(path, [&](const nlohmann::json& j) { out.push_back(text_from_json(j)); });
  return out;
}

std::size_t edit_distance(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1,
                         prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace diffro::toy

// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "emo/analysis.hpp"
#include "emo/backend.hpp"
#include "emo/cli.hpp"
#include "emo/eval.hpp"
#include "emo/head.hpp"
#include "emo/prompting.hpp"
#include "json.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace emo;
namespace fs = std::filesystem;

namespace {

constexpr double kMetricTolerance = 1e-12;
constexpr double kHandTolerance = 5e-7;  // six decimals
constexpr double kGradientRelTolerance = 1e-4;
constexpr double kGradientStep = 1e-5;
constexpr double kGradientFloor = 1e-8;  // relative error denominator floor
constexpr double kLogitTolerance = 1e-12;
constexpr double kHeadTargetF1 = 0.95;

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail = why;
    pass = false;
  }
};

struct Criterion {
  std::string name;
  double limit_s;
  std::function<Outcome()> run;
};

LabelSchema five(Track t) { return LabelSchema(test::five_labels(), t); }

Outcome template_fidelity() {
  Outcome o;
  const fs::path golden = EMO_TEST_DATA_DIR "/golden";
  auto with = [](Track t, std::map<std::string, int> v) {
    LabelAssignment a = zero_assignment(five(t));
    for (auto& [k, x] : v) a.values[k] = x;
    return a;
  };
  const Sample a_base{"1", "eng", "bro dont do this to us", with(Track::A, {{"fear", 1}})};
  const Sample a_pair{"2", "eng", "I could not unbend my knees.", with(Track::A, {})};
  const Sample b_base{"3", "eng", "A penny hit me square in the face.", with(Track::B, {{"anger", 2}, {"sadness", 1}})};
  const Sample b_pair{"4", "eng", "Totally creeped me out.", with(Track::B, {{"fear", 3}})};
  const std::pair<std::string, PromptInstance> cases[] = {
      {"track_a_base.txt", render_base_prompt(a_base, five(Track::A), true)},
      {"track_a_pairwise.txt", render_pairwise_prompts(a_pair, five(Track::A), true)[0]},
      {"track_b_base.txt", render_base_prompt(b_base, five(Track::B), true)},
      {"track_b_pairwise.txt", render_pairwise_prompts(b_pair, five(Track::B), true)[1]},
  };
  for (const auto& [file, prompt] : cases) {
    if (test::transcript(prompt) != test::read_file(golden / file)) o.fail(file + " differs");
  }
  o.detail = o.pass ? "4/4 golden files byte-identical" : o.detail;
  return o;
}

Outcome round_trip() {
  Outcome o;
  std::size_t checked = 0;
  for (auto [labels, track] : {std::pair{test::six_labels(), Track::A}, std::pair{test::five_labels(), Track::B}}) {
    LabelSchema schema(labels, track);
    const std::size_t base = static_cast<std::size_t>(max_label_value(track)) + 1;
    std::size_t total = 1;
    for (std::size_t i = 0; i < labels.size(); ++i) total *= base;
    for (std::size_t code = 0; code < total; ++code) {
      const LabelAssignment gold = test::enumerate_assignment(schema, code);
      auto f = parse_completion(render_completion(gold, schema, Strategy::base), schema, Strategy::base);
      if (f.parsed != gold.values) o.fail("base " + std::string(to_string(track)) + " code " + std::to_string(code));
      std::vector<CompletionFragment> frags;
      for (const auto& l : labels)
        frags.push_back(parse_completion(render_completion(gold, schema, Strategy::pairwise, l), schema,
                                         Strategy::pairwise, l));
      auto agg = aggregate_pairwise(frags, schema);
      if (agg.assignment != gold || agg.dropped != 0)
        o.fail("pairwise " + std::string(to_string(track)) + " code " + std::to_string(code));
      checked += 2;
    }
  }
  if (checked != 2 * (64 + 1024)) o.fail("unexpected enumeration size " + std::to_string(checked));
  if (o.pass) o.detail = std::to_string(checked) + " reconstructions exact (64 track A + 1024 track B, both strategies)";
  return o;
}

Outcome pairwise_closure() {
  Outcome o;
  const Dataset d = test::synthetic_multilingual(500, Track::B, 2024);
  const Dataset da = test::synthetic_multilingual(500, Track::A, 2025);
  std::size_t ok = 0, total = 0;
  for (const Dataset* ds : {&d, &da}) {
    for (const auto& s : ds->samples()) {
      const LabelSchema& schema = ds->schema_for(s.lang);
      std::vector<CompletionFragment> frags;
      for (const auto& p : render_pairwise_prompts(s, schema, true))
        frags.push_back(parse_completion(p.messages.at(2).content, schema, Strategy::pairwise, p.target_label, s.id));
      ++total;
      if (aggregate_pairwise(frags, schema).assignment == *s.gold) ++ok;
    }
  }
  if (ok != total) o.fail(std::to_string(ok) + "/" + std::to_string(total) + " samples reproduced");
  else o.detail = std::to_string(ok) + "/" + std::to_string(total) + " samples reproduced across " +
                  std::to_string(d.langs().size()) + " languages, both tracks";
  return o;
}

int run_cli(std::vector<std::string> args, std::string& err) {
  args.insert(args.begin(), "emodetect");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, e;
  int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, e);
  err = e.str();
  return code;
}

Outcome echo_end_to_end() {
  Outcome o;
  test::TempDir tmp("accept-echo");
  std::ostringstream summary;
  for (Track track : {Track::A, Track::B}) {
    const std::string t = track == Track::A ? "a" : "b";
    const Dataset gold = test::synthetic_multilingual(120, track, track == Track::A ? 31 : 32);
    const fs::path gold_path = tmp / ("gold_" + t + ".jsonl");
    write_dataset_jsonl(gold, gold_path);
    for (const char* strategy : {"base", "pairwise"}) {
      std::string predictions[2];
      for (int ci = 0; ci < 2; ++ci) {
        const std::string conc = ci == 0 ? "1" : "8";
        const fs::path out = tmp / (t + "_" + strategy + "_c" + conc);
        std::string err;
        if (run_cli({"infer", "--track", t, "--strategy", strategy, "--backend", "mock-echo", "--concurrency", conc,
                     "--input", gold_path.string(), "--out", out.string()},
                    err) != 0) {
          o.fail("infer failed: " + err);
          return o;
        }
        if (run_cli({"eval", "--track", t, "--pred", (out / "predictions.jsonl").string(), "--gold", gold_path.string(),
                     "--out", (out / "eval").string()},
                    err) != 0) {
          o.fail("eval failed: " + err);
          return o;
        }
        auto report = nlohmann::json::parse(test::read_file(out / "eval" / "report.json"));
        const double score = report["aggregate"].get<double>();
        if (!report["degenerate_labels"].empty()) o.fail("degenerate labels in track " + t + " data");
        if (score != 1.0) o.fail("track " + t + " " + strategy + " concurrency " + conc + " scored " + std::to_string(score));
        predictions[ci] = test::read_file(out / "predictions.jsonl");
      }
      if (predictions[0] != predictions[1]) o.fail(std::string("concurrency changed predictions for ") + strategy);
    }
    summary << (track == Track::A ? "macro-F1" : "Pearson") << "=1.0 ";
  }
  if (o.pass) o.detail = summary.str() + "for both strategies; concurrency 1 and 8 byte-identical";
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  std::mt19937_64 rng(99);
  double worst_f1 = 0, worst_r = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng() % 60, K = 1 + rng() % 6;
    std::vector<std::string> labels;
    for (std::size_t k = 0; k < K; ++k) labels.push_back("l" + std::to_string(k));
    LabelSchema sa(labels, Track::A), sb(labels, Track::B);
    std::vector<Prediction> pa, ga, pb, gb;
    std::vector<std::vector<int>> pac(K), gac(K);
    std::vector<std::vector<double>> pbc(K), gbc(K);
    for (std::size_t i = 0; i < n; ++i) {
      LabelAssignment xa{Track::A, {}}, ya{Track::A, {}}, xb{Track::B, {}}, yb{Track::B, {}};
      for (std::size_t k = 0; k < K; ++k) {
        const int p1 = static_cast<int>(rng() % 2), g1 = static_cast<int>(rng() % 2);
        const int p2 = static_cast<int>(rng() % 4), g2 = static_cast<int>(rng() % 4);
        xa.values[labels[k]] = p1;
        ya.values[labels[k]] = g1;
        xb.values[labels[k]] = p2;
        yb.values[labels[k]] = g2;
        pac[k].push_back(p1);
        gac[k].push_back(g1);
        pbc[k].push_back(p2);
        gbc[k].push_back(g2);
      }
      const std::string id = "s" + std::to_string(i);
      pa.push_back({id, xa});
      ga.push_back({id, ya});
      pb.push_back({id, xb});
      gb.push_back({id, yb});
    }
    worst_f1 = std::max(worst_f1, std::abs(macro_f1(pa, ga, sa).aggregate - oracle::macro_f1(pac, gac)));
    double r_sum = 0;
    for (std::size_t k = 0; k < K; ++k) r_sum += oracle::pearson_sums(pbc[k], gbc[k]);
    worst_r = std::max(worst_r, std::abs(pearson_score(pb, gb, sb).aggregate - r_sum / static_cast<double>(K)));
  }
  if (worst_f1 > kMetricTolerance) o.fail("macro-F1 deviates by " + std::to_string(worst_f1));
  if (worst_r > kMetricTolerance) o.fail("Pearson deviates by " + std::to_string(worst_r));

  LabelSchema s2({"l1", "l2"}, Track::A);
  auto mk = [](Track tr, const std::vector<std::vector<int>>& v, const std::vector<std::string>& labels) {
    std::vector<Prediction> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      LabelAssignment a{tr, {}};
      for (std::size_t k = 0; k < labels.size(); ++k) a.values[labels[k]] = v[i][k];
      out.push_back({"s" + std::to_string(i), a});
    }
    return out;
  };
  const double macro = macro_f1(mk(Track::A, {{1, 0}, {0, 1}, {0, 1}, {0, 1}}, {"l1", "l2"}),
                                mk(Track::A, {{1, 0}, {1, 1}, {0, 0}, {0, 1}}, {"l1", "l2"}), s2)
                           .aggregate;
  LabelSchema s1({"l1"}, Track::B);
  const double r = pearson_score(mk(Track::B, {{0}, {2}, {2}, {2}}, {"l1"}), mk(Track::B, {{0}, {1}, {2}, {3}}, {"l1"}), s1)
                       .aggregate;
  if (std::abs(macro - 0.733333) > kHandTolerance) o.fail("hand macro-F1 " + std::to_string(macro));
  if (std::abs(r - 0.774597) > kHandTolerance) o.fail("hand Pearson " + std::to_string(r));
  if (o.pass) {
    std::ostringstream d;
    d << std::setprecision(3) << "max |dF1|=" << worst_f1 << " max |dr|=" << worst_r << " over 100 instances each; hand "
      << std::setprecision(7) << macro << ", " << r;
    o.detail = d.str();
  }
  return o;
}

Outcome gradient_check() {
  Outcome o;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1, 1);
  double worst = 0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t d = 1 + rng() % 8, m = 1 + rng() % 8, K = 1 + rng() % 8;
    HeadParams p{Matrix(d, m), Matrix(m, K)};
    for (double& x : p.hidden.data()) x = u(rng);
    for (double& x : p.output.data()) x = u(rng);
    std::vector<double> h(d), y(K);
    for (auto& x : h) x = u(rng);
    for (auto& x : y) x = static_cast<double>(rng() % 2);
    std::vector<std::uint8_t> mask(K, 1);
    std::vector<int> imask(K, 1);
    if (K > 2 && t % 2) mask[1] = imask[1] = 0;

    const auto g = head_gradients(p, h, y, mask);
    const std::vector<double> wh(p.hidden.data().begin(), p.hidden.data().end());
    const std::vector<double> wo(p.output.data().begin(), p.output.data().end());
    const auto nh = oracle::central_difference(
        wh, [&](const std::vector<double>& x) { return oracle::head_loss(x, wo, h, y, imask, d, m, K); }, kGradientStep);
    const auto no = oracle::central_difference(
        wo, [&](const std::vector<double>& x) { return oracle::head_loss(wh, x, h, y, imask, d, m, K); }, kGradientStep);
    auto rel = [](double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), kGradientFloor}); };
    for (std::size_t i = 0; i < nh.size(); ++i) worst = std::max(worst, rel(g.hidden.data()[i], nh[i]));
    for (std::size_t i = 0; i < no.size(); ++i) worst = std::max(worst, rel(g.output.data()[i], no[i]));
  }
  std::ostringstream d;
  d << std::setprecision(3) << "max relative error " << worst << " over 20 shapes";
  if (worst >= kGradientRelTolerance) o.fail(d.str());
  else o.detail = d.str();
  return o;
}

Outcome head_training() {
  Outcome o;
  const Dataset train = test::keyword_separable(200, 101, "t"), dev = test::keyword_separable(50, 202, "d");
  HashedNgramFeatures features(256, 5);
  TrainConfig cfg;  // lr 3e-4, 6 epochs
  const TrainResult a = train_head(train, dev, features, cfg);
  const TrainResult b = train_head(train, dev, features, cfg);
  if (a.history != b.history || !(a.params == b.params)) o.fail("same seed produced different runs");
  double best = 0;
  for (const auto& e : a.history) best = std::max(best, e.dev_macro_f1);
  if (cfg.learning_rate != 3e-4 || cfg.epochs != 6 || a.history.size() != 6) o.fail("unexpected configuration");
  std::ostringstream d;
  d << "best dev macro-F1 " << std::setprecision(4) << best << " at epoch " << a.best_epoch << " (lr 3e-4, 6 epochs)";
  if (best < kHeadTargetF1) o.fail(d.str());
  else if (o.pass) o.detail = d.str() + "; histories identical";
  return o;
}

Outcome split_protocol() {
  Outcome o;
  std::mt19937_64 rng(4242);
  const std::vector<std::string> langs{"eng", "deu", "hin", "ptbr", "swa", "tat"};
  LabelSchema schema({"anger", "joy"}, Track::A);
  std::size_t per_lang_checks = 0, rejected = 0;
  for (int trial = 0; trial < 1000 && o.pass; ++trial) {
    std::vector<Sample> samples;
    std::map<std::string, std::size_t> counts;
    const std::size_t n_langs = 1 + rng() % langs.size();
    for (std::size_t l = 0; l < n_langs; ++l) {
      const std::size_t n = rng() % 80;
      for (std::size_t i = 0; i < n; ++i) {
        samples.push_back({langs[l] + "-" + std::to_string(rng() % 1000000) + "-" + std::to_string(i), langs[l], "text",
                           LabelAssignment{Track::A, {{"anger", 0}, {"joy", 1}}}});
        ++counts[langs[l]];
      }
    }
    if (samples.empty()) continue;
    const std::uint64_t seed = rng();
    const Dataset d(samples, schema);
    if (std::llround(0.1 * static_cast<double>(d.size())) == 0) {
      // too small for a non-empty dev half: must be rejected
      try {
        internal_split(d, 0.1, seed);
        o.fail("split of " + std::to_string(d.size()) + " samples was not rejected");
      } catch (const DataError&) {
        ++rejected;
      }
      continue;
    }
    const SplitResult s1 = internal_split(d, 0.1, seed), s2 = internal_split(d, 0.1, seed);
    if (s1.dev != s2.dev || s1.train != s2.train) o.fail("non-deterministic at trial " + std::to_string(trial));

    std::shuffle(samples.begin(), samples.end(), rng);
    const SplitResult s3 = internal_split(Dataset(samples, schema), 0.1, seed);
    std::set<std::string> ids1, ids3;
    for (const auto& x : s1.dev.samples()) ids1.insert(x.id);
    for (const auto& x : s3.dev.samples()) ids3.insert(x.id);
    if (ids1 != ids3) o.fail("order-dependent at trial " + std::to_string(trial));

    std::map<std::string, std::size_t> dev_counts;
    for (const auto& x : s1.dev.samples()) ++dev_counts[x.lang];
    for (const auto& [lang, n] : counts) {
      const double target = 0.1 * static_cast<double>(n);
      if (std::abs(static_cast<double>(dev_counts[lang]) - target) > 1.0)
        o.fail(lang + " dev " + std::to_string(dev_counts[lang]) + " vs target " + std::to_string(target));
      ++per_lang_checks;
    }
    if (s1.dev.size() + s1.train.size() != d.size()) o.fail("samples lost");
  }
  if (o.pass)
    o.detail = "1000 trials, " + std::to_string(per_lang_checks) + " per-language counts within +/-1, " +
               std::to_string(rejected) + " undersized datasets rejected";
  return o;
}

Outcome logit_refinement() {
  Outcome o;
  const Completion c{"yes", std::vector<TokenLogprob>{{"yes", std::log(0.9)}, {"no", std::log(0.1)}}};
  const double p = pairwise_yes_probability(c);
  if (std::abs(p - 0.9) > kLogitTolerance) o.fail("0.9/0.1 case gave " + std::to_string(p));

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> lp(-20.0, 0.0), step(0.0, 5.0);
  for (int i = 0; i < 1000; ++i) {
    const double y = lp(rng), n = lp(rng);
    const double y2 = std::min(0.0, y + step(rng));
    const double p1 = pairwise_yes_probability(Completion{"", std::vector<TokenLogprob>{{"yes", y}, {"no", n}}});
    const double p2 = pairwise_yes_probability(Completion{"", std::vector<TokenLogprob>{{"yes", y2}, {"no", n}}});
    const double p3 = pairwise_yes_probability(Completion{"", std::vector<TokenLogprob>{{"yes", y}, {"no", n - step(rng)}}});
    if (!(p2 >= p1) || !(p3 >= p1)) o.fail("non-monotone at pair " + std::to_string(i));
    if (p1 < 0 || p1 > 1) o.fail("probability out of range");
    const double expected = 1.0 / (1.0 + std::exp(n - y));
    if (std::abs(p1 - expected) > kLogitTolerance) o.fail("softmax mismatch at pair " + std::to_string(i));
  }
  if (o.pass) o.detail = "0.9/0.1 -> " + std::to_string(p) + "; 1000 random pairs monotone";
  return o;
}

Outcome analysis_conservation() {
  Outcome o;
  std::mt19937_64 rng(77);
  const LabelSchema schema({"anger", "disgust", "fear", "joy", "sadness"}, Track::A);
  for (int t = 0; t < 1000 && o.pass; ++t) {
    const std::size_t n = 1 + rng() % 40;
    std::vector<Prediction> base, pair, gold;
    for (std::size_t i = 0; i < n; ++i) {
      const std::string id = "s" + std::to_string(i);
      base.push_back({id, test::random_assignment(schema, rng)});
      pair.push_back({id, test::random_assignment(schema, rng)});
      gold.push_back({id, test::random_assignment(schema, rng)});
    }
    const auto h = improvement_distribution(base, pair, gold);
    const auto swapped = improvement_distribution(pair, base, gold);
    if (h.total() != n) o.fail("mass not conserved at trial " + std::to_string(t));
    if (h.buckets.size() != swapped.buckets.size()) o.fail("bucket sets differ under swap");
    for (const auto& [b, c] : h.buckets) {
      const auto it = swapped.buckets.find(b);
      if (it == swapped.buckets.end() || it->second.base_better != c.pairwise_better ||
          it->second.pairwise_better != c.base_better || it->second.tie != c.tie)
        o.fail("swap asymmetry at trial " + std::to_string(t));
    }
  }
  if (o.pass) o.detail = "1000 fuzzed prediction pairs conserve mass and swap symmetrically";
  return o;
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"template_fidelity", 1, template_fidelity},
      {"render_parse_round_trip", 10, round_trip},
      {"pairwise_closure", 10, pairwise_closure},
      {"echo_backend_end_to_end", 30, echo_end_to_end},
      {"metric_oracles", 10, metric_oracles},
      {"gradient_check", 10, gradient_check},
      {"head_training", 60, head_training},
      {"split_protocol", 30, split_protocol},
      {"logit_refinement", 1, logit_refinement},
      {"analysis_conservation", 10, analysis_conservation},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.fail(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs > c.limit_s) o.fail("took " + std::to_string(secs) + " s");
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << " [" << std::fixed << std::setprecision(3) << secs << " s / "
              << std::setprecision(0) << c.limit_s << " s] " << o.detail << std::defaultfloat << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed;
}

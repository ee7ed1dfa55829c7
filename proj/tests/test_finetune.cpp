#include <doctest.h>

#include <cmath>

#include "sarssl/errors.hpp"
#include "sarssl/finetune.hpp"
#include "sarssl/tiles.hpp"
#include "sarssl/vit.hpp"

using namespace sarssl;
using namespace sarssl::finetune;

namespace {

vit::VitConfig small_vit() {
  vit::VitConfig c;
  c.image_size = 16;
  c.patch_size = 8;
  c.channels = tiles::kAmplitudeChannels;
  c.embed_dim = 16;
  c.depth = 1;
  c.heads = 2;
  c.head_output_dim = 32;
  c.head_hidden_dim = 32;
  c.head_bottleneck_dim = 16;
  c.input_offset = 15.0;
  c.input_scale = 0.1;
  return c;
}

std::vector<tiles::Tile> tiles_for(const std::string& region, int n, std::uint64_t seed) {
  return tiles::synth_region(tiles::reference_recipe(region),
                             {n, 16, tiles::Modality::amplitude, 4, seed});
}

FinetuneConfig quick_config() {
  FinetuneConfig f;
  f.mode = Mode::frozen_backbone;
  f.decoder_input = DecoderInput::class_token;
  f.learning_rate = 0.05;
  f.epochs = 4;
  f.batch_size = 4;
  f.seed = 3;
  return f;
}

}  // namespace

TEST_CASE("subsample_labels") {
  const auto a = subsample_labels(200, 0.01, 5);
  CHECK(a.size() == 2u);
  CHECK(subsample_labels(1000, 0.01, 5).size() == 10u);
  CHECK(subsample_labels(10, 0.01, 5).size() == 1u);
  CHECK(subsample_labels(7, 1.0, 5) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});

  const auto s = subsample_labels(500, 0.1, 11);
  CHECK(s.size() == 50u);
  CHECK(std::is_sorted(s.begin(), s.end()));
  CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
  CHECK(s.back() < 500u);
  CHECK(subsample_labels(500, 0.1, 11) == s);
  CHECK(subsample_labels(500, 0.1, 12) != s);

  // Every index is drawn with roughly equal frequency.
  std::vector<int> hits(20, 0);
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    for (auto i : subsample_labels(20, 0.25, seed)) ++hits[i];
  }
  for (int h : hits) CHECK(std::abs(h - 500) < 100);

  CHECK_THROWS_AS(subsample_labels(10, 0.0, 0), ParameterError);
  CHECK_THROWS_AS(subsample_labels(10, 1.5, 0), ParameterError);
  CHECK_THROWS_AS(subsample_labels(0, 0.5, 0), DataError);
}

TEST_CASE("decoder_forward") {
  auto d = init_decoder(3, 40.0f);
  const std::vector<float> f{1.0f, -2.0f, 7.0f};
  CHECK(decoder_forward<float>(f, d, true) == 40.0f);

  d.at("decoder.bias")[0] = 150.0f;
  CHECK(decoder_forward<float>(f, d, true) == 100.0f);
  CHECK(decoder_forward<float>(f, d, false) == 150.0f);
  d.at("decoder.bias")[0] = -5.0f;
  CHECK(decoder_forward<float>(f, d, true) == 0.0f);

  d.at("decoder.bias")[0] = 10.0f;
  d.at("decoder.weight")[0] = 2.0f;
  d.at("decoder.weight")[1] = 0.5f;
  d.at("decoder.weight")[2] = 3.0f;
  // 10 + 2 - 1 + 21
  CHECK(decoder_forward<float>(f, d, true) == 32.0f);

  const std::vector<float> wrong{1.0f, 2.0f};
  CHECK_THROWS_AS(decoder_forward<float>(wrong, d, true), DimensionError);
  CHECK_THROWS_AS(init_decoder(0, 0.0f), ParameterError);
}

TEST_CASE("rmse") {
  const std::vector<double> p{0.0, 0.0}, y{3.0, 4.0};
  CHECK(rmse(p, y) == doctest::Approx(3.5355339059).epsilon(1e-10));
  CHECK(rmse(y, p) == rmse(p, y));
  CHECK(rmse(y, y) == 0.0);

  std::vector<double> a(1000), b(1000);
  long double acc = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = std::sin(0.37 * static_cast<double>(i)) * 50.0 + 50.0;
    b[i] = std::cos(0.11 * static_cast<double>(i)) * 40.0 + 45.0;
    const long double d = static_cast<long double>(a[i]) - b[i];
    acc += d * d;
  }
  CHECK(rmse(a, b) == doctest::Approx(static_cast<double>(std::sqrt(acc / 1000.0L))).epsilon(1e-12));

  const std::vector<double> one{1.0};
  CHECK_THROWS_AS(rmse(one, y), DimensionError);
  CHECK_THROWS_AS(rmse(std::vector<double>{}, std::vector<double>{}), DataError);
}

TEST_CASE("feature dimensions") {
  const auto c = small_vit();
  CHECK(feature_dim(c, DecoderInput::class_token) == 16);
  CHECK(feature_dim(c, DecoderInput::attention) == 2 * 4);
  const auto params = vit::init_student(c, 1);
  const auto t = tiles_for("regA", 1, 0);
  CHECK(tile_features<float>(params, c, t[0], DecoderInput::class_token).size() == 16u);
  CHECK(tile_features<float>(params, c, t[0], DecoderInput::attention).size() == 8u);

  auto big = tiles::synth_region(tiles::reference_recipe("regA"), {1, 32, tiles::Modality::amplitude, 4, 0});
  CHECK_THROWS_AS(tile_features<float>(params, c, big[0], DecoderInput::class_token), DimensionError);
}

TEST_CASE("constant labels are fitted") {
  const auto c = small_vit();
  const auto params = vit::init_student(c, 2);
  auto train = tiles_for("regB", 16, 1);
  auto val = tiles_for("regB", 8, 2);
  for (auto& t : train) t.label = 40.0f;
  for (auto& t : val) t.label = 40.0f;
  for (auto mode : {Mode::frozen_backbone, Mode::full}) {
    auto cfg = quick_config();
    cfg.mode = mode;
    cfg.decoder_input = DecoderInput::attention;
    const auto r = finetune_fit(params, c, train, val, cfg);
    const auto pred = predict(r.backbone, r.decoder, c, cfg.decoder_input, val);
    CHECK(rmse(pred, labels_of(val)) < 1.0);
  }
}

TEST_CASE("frozen backbone fit") {
  const auto c = small_vit();
  const auto params = vit::init_student(c, 4);
  const auto train = tiles_for("regA", 24, 5);
  const auto val = tiles_for("regA", 12, 6);
  auto cfg = quick_config();
  cfg.epochs = 30;

  const auto before = backbone_only(params).checksum();
  const auto r = finetune_fit(params, c, train, val, cfg);
  CHECK(r.backbone.checksum() == before);
  CHECK(backbone_only(params).checksum() == before);
  CHECK_FALSE(r.backbone.contains("head.last.weight"));

  REQUIRE(r.curve.size() == 30u);
  CHECK(r.curve.back().train_mse < r.curve.front().train_mse);
  CHECK(r.best_val_rmse == r.curve[static_cast<std::size_t>(r.best_epoch)].val_rmse);
  for (const auto& e : r.curve) CHECK(r.best_val_rmse <= e.val_rmse);
  CHECK(rmse(predict(r.backbone, r.decoder, c, cfg.decoder_input, val), labels_of(val)) ==
        doctest::Approx(r.best_val_rmse).epsilon(1e-6));

  const auto again = finetune_fit(params, c, train, val, cfg);
  CHECK(again.decoder.checksum() == r.decoder.checksum());
  CHECK(report_csv(again.curve, 1.5) == report_csv(r.curve, 1.5));

  cfg.mode = Mode::full;
  cfg.epochs = 2;
  const auto full = finetune_fit(params, c, train, val, cfg);
  CHECK(full.backbone.checksum() != before);
}

TEST_CASE("fine-tune errors") {
  const auto c = small_vit();
  const auto params = vit::init_student(c, 4);
  auto train = tiles_for("regA", 4, 5);
  const auto val = tiles_for("regA", 4, 6);
  auto cfg = quick_config();
  CHECK_THROWS_AS(finetune_fit(params, c, {}, val, cfg), DataError);
  CHECK_THROWS_AS(finetune_fit(params, c, train, {}, cfg), DataError);
  train[1].label.reset();
  CHECK_THROWS_AS(finetune_fit(params, c, train, val, cfg), DataError);
  cfg.label_fraction = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(parse_mode("partial"), ConfigError);
  CHECK(parse_decoder_input(to_string(DecoderInput::attention)) == DecoderInput::attention);
  CHECK(parse_mode(to_string(Mode::frozen_backbone)) == Mode::frozen_backbone);
}

TEST_CASE("report csv and checkpoint helpers") {
  const std::vector<EpochRecord> curve{{0, 100.5, 9.25}, {1, 50.0, 7.0}};
  CHECK(report_csv(curve, std::nullopt) == "epoch,train_mse,val_rmse\n0,100.5,9.25\n1,50,7\n");
  CHECK(report_csv(curve, 6.5) == "epoch,train_mse,val_rmse\n0,100.5,9.25\n1,50,7\ntest_rmse,6.5\n");

  const auto c = small_vit();
  const auto params = vit::init_student(c, 9);
  auto dec = init_decoder(16, 12.0f);
  const auto both = combine(backbone_only(params), dec);
  CHECK(decoder_only(both).checksum() == dec.checksum());
  CHECK(backbone_only(both).checksum() == backbone_only(params).checksum());
  CHECK_THROWS_AS(decoder_only(backbone_only(params)), DataError);
}

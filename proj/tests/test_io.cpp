#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "mwn/audit.hpp"
#include "mwn/config.hpp"
#include "mwn/mask_export.hpp"
#include "mwn/random.hpp"
#include "mwn/toy/settings.hpp"
#include "mwn/weights_io.hpp"

using namespace mwn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mwn_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

std::size_t line_of_error(const std::string& text) {
  try {
    Config::parse(text);
  } catch (const ConfigError& e) {
    return e.line();
  }
  return 0;
}

}  // namespace

TEST(Config, ParsesCommentsAndWhitespace) {
  const Config c = Config::parse("# header\n\n  variant = m-frcn-l  # trailing\nseed=3\r\nlr = 0.02\n");
  EXPECT_EQ(c.get_string("variant", ""), "m-frcn-l");
  EXPECT_EQ(c.get_uint("seed", 0), 3u);
  EXPECT_EQ(c.get_double("lr", 0), 0.02);
  EXPECT_EQ(c.line_of("seed"), 4u);
  EXPECT_EQ(c.get_uint("missing", 9), 9u);
}

TEST(Config, MalformedLinesReportLineNumbers) {
  EXPECT_EQ(line_of_error("a = 1\nno equals sign\n"), 2u);
  EXPECT_EQ(line_of_error("a = 1\n\n = 2\n"), 3u);
  EXPECT_EQ(line_of_error("a = \n"), 1u);
  EXPECT_EQ(line_of_error("a b = 1\n"), 1u);
  EXPECT_EQ(line_of_error("a = 1\n# c\na = 2\n"), 3u);
}

TEST(Config, TypedGettersRejectBadValues) {
  const Config c = Config::parse("n = -3\nx = 1.5abc\nb = maybe\n");
  EXPECT_THROW(c.get_uint("n", 0), ConfigError);
  EXPECT_THROW(c.get_double("x", 0), ConfigError);
  EXPECT_THROW(c.get_bool("b", false), ConfigError);
  try {
    c.get_double("x", 0);
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(Config, PrintParseRoundTrip) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    Config c;
    const auto n = rng.uniform_int(0, 8);
    for (int k = 0; k < n; ++k) {
      c.set("key_" + std::to_string(k), rng.uniform() < 0.5 ? format_double(rng.normal() * 1e3)
                                                              : std::to_string(rng.below(1000000)));
    }
    EXPECT_EQ(Config::parse(c.to_string()), c);
  }
}

TEST(Config, FormatDoubleRoundTrips) {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const double v = rng.normal() * std::pow(10.0, rng.uniform_int(-20, 20));
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
}

TEST(Settings, RoundTripThroughConfigText) {
  toy::RunSettings s;
  s.detector.encoder.variant = Variant::kBaselineGlobal;
  s.train.lr = 0.0123456789;
  s.train.seed = 17;
  s.train.scene.position_prior = false;
  s.detector.backbone.conv3_kernel = 3;
  const Config c = toy::settings_to_config(s);
  const Config back = toy::settings_to_config(toy::settings_from_config(Config::parse(c.to_string())));
  EXPECT_EQ(back, c);
}

TEST(Settings, UnknownKeyAndBadVariantAreConfigErrors) {
  try {
    toy::settings_from_config(Config::parse("seed = 1\nsteps_typo = 3\n"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  try {
    toy::settings_from_config(Config::parse("\nvariant = m-frcn-x\n"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(toy::settings_from_config(Config::parse("n_prime = 4\n")), ConfigError);
  EXPECT_THROW(toy::settings_from_config(Config::parse("scene_max_side = 80\n")), ConfigError);
}

TEST(Settings, AcceptsEveryVariantName) {
  for (const char* v : {"baseline-local", "baseline-global", "m-frcn-l", "m-frcn-g", "m-frcn-lg"}) {
    const auto s = toy::settings_from_config(Config::parse(std::string("variant = ") + v));
    EXPECT_EQ(variant_name(s.detector.encoder.variant), v);
  }
}

TEST(Audit, VggSizedConnectionCounts) {
  const auto rows = audit_rows(audit_setup_from_config(Config{}, toy::run_config_keys()));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].fc_connections, 131072u);
  EXPECT_EQ(rows[1].fc_connections, 102760448u);
  EXPECT_EQ(with_commas(rows[0].fc_connections), "131,072");
  EXPECT_EQ(with_commas(rows[1].fc_connections), "102,760,448");
  const auto lg = audit_rows(audit_setup_from_config(Config::parse("variant = lg\nd_fc = 512"), toy::run_config_keys()));
  EXPECT_EQ(lg[0].fc_connections, 524288u);
}

TEST(WithCommas, Grouping) {
  EXPECT_EQ(with_commas(0), "0");
  EXPECT_EQ(with_commas(999), "999");
  EXPECT_EQ(with_commas(1000), "1,000");
  EXPECT_EQ(with_commas(524288), "524,288");
}

TEST(Weights, ByteLayoutMatchesReference) {
  // reference bytes from tests/oracles/derive_oracles.py (struct.pack "<2d")
  const std::string bytes = encode_weights({{"a", Tensor({2}, {1.5, -0.25})}});
  const std::string expected_hex = "612066363420320a0a000000000000f83f000000000000d0bf";
  std::string hex;
  char buf[3];
  for (unsigned char ch : bytes) {
    std::snprintf(buf, sizeof buf, "%02x", ch);
    hex += buf;
  }
  EXPECT_EQ(hex, expected_hex);
}

TEST(Weights, RoundTripIsBitExact) {
  Rng rng(3);
  NamedTensors t = {{"mwn_l.kernels", rng.normal_tensor({4, 1, 3, 3}, 1.0)},
                    {"mwn_l.bias", rng.normal_tensor({4}, 1e-300)},
                    {"fc.weight", rng.normal_tensor({2, 8}, 1e300)}};
  t[2].second[0] = -0.0;
  const NamedTensors back = decode_weights(encode_weights(t));
  ASSERT_EQ(back.size(), t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(back[i].first, t[i].first);
    EXPECT_EQ(std::memcmp(back[i].second.data().data(), t[i].second.data().data(), 8 * t[i].second.size()), 0);
  }
  const fs::path dir = scratch("weights");
  save_weights((dir / "w.bin").string(), t);
  EXPECT_EQ(load_weights((dir / "w.bin").string()), t);
}

TEST(Weights, RejectsCorruptFiles) {
  const std::string good = encode_weights({{"a", Tensor({2}, {1.0, 2.0})}});
  EXPECT_THROW(decode_weights(good.substr(0, good.size() - 1)), WeightFileError);
  EXPECT_THROW(decode_weights(good + "x"), WeightFileError);
  EXPECT_THROW(decode_weights("a f32 2\n\n"), WeightFileError);
  EXPECT_THROW(decode_weights("a f64 2"), WeightFileError);
  EXPECT_THROW(load_weights("/nonexistent/w.bin"), WeightFileError);
  EXPECT_THROW(encode_weights({{"bad name", Tensor({1})}}), WeightFileError);
}

TEST(MaskExport, MinMaxNormalization) {
  const auto px = mask_to_gray8(Tensor({2, 2}, {-1, 0, 1, 0.5}));
  EXPECT_EQ(px, (std::vector<unsigned char>{0, 128, 255, 191}));
  EXPECT_EQ(mask_to_gray8(Tensor::full({3, 3}, 0.7)), std::vector<unsigned char>(9, 128));
}

TEST(MaskExport, CsvRoundTripIsBitExact) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    Tensor m = rng.normal_tensor({7, 7}, std::pow(10.0, rng.uniform_int(-8, 8)));
    m[3] = -0.0;
    m[5] = 5e-324;
    const Tensor back = mask_from_csv(mask_to_csv(m));
    EXPECT_EQ(back.shape(), m.shape());
    EXPECT_EQ(std::memcmp(back.data().data(), m.data().data(), 8 * m.size()), 0);
  }
  EXPECT_THROW(mask_from_csv("1,2\n3\n"), ExportError);
  EXPECT_THROW(mask_from_csv("1,x\n"), ExportError);
}

TEST(MaskExport, WritesOnePgmAndCsvPerMask) {
  EncoderConfig cfg;
  cfg.variant = Variant::kLocalGlobal;
  Rng rng(5);
  const EncoderParams p = init_encoder_params(cfg, rng);
  const fs::path dir = scratch("masks");
  const auto s = export_masks(dir, cfg, p, {16, 16});
  EXPECT_EQ(s.local_masks, 32u);
  EXPECT_EQ(s.global_masks, 32u * canonical_rois({16, 16}).size());

  std::size_t pgm = 0, csv = 0;
  for (const auto& e : fs::directory_iterator(dir / "mwn_l")) {
    pgm += e.path().extension() == ".pgm";
    csv += e.path().extension() == ".csv";
  }
  EXPECT_EQ(pgm, 32u);
  EXPECT_EQ(csv, 32u);

  const MaskSet masks = precompute_masks_l(cfg, p);
  EXPECT_EQ(mask_from_csv(slurp(dir / "mwn_l" / "mask_005.csv")), masks.masks.channel(5));
  const std::string pgm5 = slurp(dir / "mwn_l" / "mask_005.pgm");
  const std::string header = "P5\n7 7\n255\n";
  ASSERT_EQ(pgm5.size(), header.size() + 49);
  EXPECT_EQ(pgm5.substr(0, header.size()), header);

  const Tensor full_raw = context_raw_mask({0, 0, 16, 16, 0}, {16, 16}, 7, 1.0, -1.0);
  EXPECT_EQ(mask_from_csv(slurp(dir / "mwn_g" / "full" / "mask_000.csv")),
            mwn_forward(full_raw, *p.mwn_g).masks.channel(0));
}

TEST(MaskExport, UnwritableDirectoryIsAnError) {
  EncoderConfig cfg;
  Rng rng(6);
  const EncoderParams p = init_encoder_params(cfg, rng);
  const fs::path dir = scratch("blocked");
  std::ofstream(dir / "file") << "x";
  EXPECT_THROW(export_masks(dir / "file" / "sub", cfg, p, {16, 16}), ExportError);
}

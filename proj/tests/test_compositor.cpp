#include "support.hpp"

#include "splatbus/compositor.hpp"

#include <doctest.h>

using namespace splatbus;
using namespace splatbus::compositor;

namespace {

LayerImage layer(int w, int h, float r, float g, float b, float a, float depth)
{
    LayerImage l{ColorImage(w, h), DepthImage(w, h, depth)};
    for (std::size_t i = 0; i < l.color.pixel_count(); ++i) {
        l.color.data[i * 4 + 0] = r * a;
        l.color.data[i * 4 + 1] = g * a;
        l.color.data[i * 4 + 2] = b * a;
        l.color.data[i * 4 + 3] = a;
    }
    return l;
}

LayerImage random_layer(std::mt19937_64& rng, int w, int h, bool opaque)
{
    std::uniform_real_distribution<float> u(0.0f, 1.0f), z(0.5f, 10.0f);
    LayerImage l{ColorImage(w, h), DepthImage(w, h)};
    for (std::size_t i = 0; i < l.color.pixel_count(); ++i) {
        const float a = opaque ? 1.0f : u(rng);
        for (int c = 0; c < 3; ++c)
            l.color.data[i * 4 + c] = u(rng) * a;
        l.color.data[i * 4 + 3] = a;
        l.depth.data[i] = z(rng);
    }
    return l;
}

} // namespace

TEST_SUITE("compositor")
{
    TEST_CASE("nearer layer is blended over the farther one")
    {
        const Rgb bg{0.0f, 0.0f, 1.0f};
        const auto splat = layer(1, 1, 1, 0, 0, 0.5f, 2.0f);
        const auto mesh = layer(1, 1, 0, 1, 0, 0.5f, 3.0f);
        const auto out = composite_depth_aware(splat, mesh, bg);
        CHECK(out.data[0] == doctest::Approx(0.5));
        CHECK(out.data[1] == doctest::Approx(0.25));
        CHECK(out.data[2] == doctest::Approx(0.25));
        CHECK(out.data[3] == doctest::Approx(0.75));

        const auto swapped = composite_depth_aware(layer(1, 1, 1, 0, 0, 0.5f, 4.0f), mesh, bg);
        CHECK(swapped.data[0] == doctest::Approx(0.25));
        CHECK(swapped.data[1] == doctest::Approx(0.5));
    }

    TEST_CASE("equal depth puts the splat layer in front")
    {
        const auto out = composite_depth_aware(layer(1, 1, 1, 0, 0, 1, 2), layer(1, 1, 0, 1, 0, 1, 2), Rgb{});
        CHECK(out.data[0] == 1.0f);
        CHECK(out.data[1] == 0.0f);
    }

    TEST_CASE("empty layers show the background")
    {
        const auto out = composite_depth_aware(layer(2, 2, 0, 0, 0, 0, 1e10f), layer(2, 2, 0, 0, 0, 0, 1e10f),
                                               Rgb{0.2f, 0.3f, 0.4f});
        CHECK(out.data[0] == doctest::Approx(0.2));
        CHECK(out.data[1] == doctest::Approx(0.3));
        CHECK(out.data[2] == doctest::Approx(0.4));
        CHECK(out.data[3] == 0.0f);
    }

    TEST_CASE("opaque layers reduce to a z-test")
    {
        std::mt19937_64 rng(41);
        for (int i = 0; i < 20; ++i) {
            const auto s = random_layer(rng, 32, 24, true);
            const auto m = random_layer(rng, 32, 24, true);
            const auto r = composite_commutes_check(s, m, 1e-6);
            CHECK(r.ok());
            CHECK(r.checked == 32u * 24u);
            CHECK(r.skipped == 0u);
        }
    }

    TEST_CASE("translucent pixels follow the over operator")
    {
        std::mt19937_64 rng(42);
        const Rgb bg{0.1f, 0.2f, 0.3f};
        for (int i = 0; i < 20; ++i) {
            const auto s = random_layer(rng, 8, 8, false);
            const auto m = random_layer(rng, 8, 8, false);
            const auto out = composite_depth_aware(s, m, bg);
            const auto r = composite_commutes_check(s, m);
            CHECK(r.skipped == 64u);
            for (std::size_t p = 0; p < 64; ++p) {
                const bool sf = s.depth.data[p] <= m.depth.data[p];
                const float* f = (sf ? s : m).color.data.data() + p * 4;
                const float* b = (sf ? m : s).color.data.data() + p * 4;
                const double bgc[3] = {bg.r, bg.g, bg.b};
                for (int c = 0; c < 3; ++c) {
                    const double expected = f[c] + (1.0 - f[3]) * (b[c] + (1.0 - b[3]) * bgc[c]);
                    CHECK(out.data[p * 4 + c] == doctest::Approx(expected).epsilon(1e-6));
                }
                CHECK(out.data[p * 4 + 3] == doctest::Approx(1.0 - (1.0 - f[3]) * (1.0 - b[3])).epsilon(1e-6));
            }
        }
    }

    TEST_CASE("size mismatch")
    {
        CHECK_THROWS_AS(composite_depth_aware(layer(2, 2, 0, 0, 0, 1, 1), layer(2, 3, 0, 0, 0, 1, 1), Rgb{}), Error);
        LayerImage bad = layer(2, 2, 0, 0, 0, 1, 1);
        bad.depth = DepthImage(1, 1);
        try {
            composite_commutes_check(bad, layer(2, 2, 0, 0, 0, 1, 1));
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::dimension_mismatch);
        }
    }
}

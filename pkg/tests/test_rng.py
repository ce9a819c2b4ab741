import unittest

from rng import Xorshift64Star, derive_seed, splitmix64


class TestXorshift64Star(unittest.TestCase):
    def test_splitmix_reference_value(self):
        # first output of splitmix64 started from state 0
        self.assertEqual(splitmix64(0), 0xE220A8397B1DCDAF)

    def test_same_seed_same_stream(self):
        a, b = Xorshift64Star(42), Xorshift64Star(42)
        self.assertEqual([a.next_u64() for _ in range(50)], [b.next_u64() for _ in range(50)])

    def test_different_seeds_differ(self):
        a, b = Xorshift64Star(1), Xorshift64Star(2)
        self.assertNotEqual([a.next_u64() for _ in range(5)], [b.next_u64() for _ in range(5)])

    def test_uniform_in_unit_interval(self):
        rng = Xorshift64Star(3)
        draws = [rng.random() for _ in range(2000)]
        self.assertTrue(all(0.0 <= x < 1.0 for x in draws))
        self.assertAlmostEqual(sum(draws) / len(draws), 0.5, delta=0.05)

    def test_uniform_array_range(self):
        arr = Xorshift64Star(5).uniform_array(500, -0.1, 0.1)
        self.assertEqual(arr.shape, (500,))
        self.assertTrue(((arr >= -0.1) & (arr < 0.1)).all())

    def test_gauss_moments(self):
        arr = Xorshift64Star(11).gauss_array(4000, 1.0, 2.0)
        self.assertAlmostEqual(float(arr.mean()), 1.0, delta=0.15)
        self.assertAlmostEqual(float(arr.std()), 2.0, delta=0.15)

    def test_permutation_is_a_permutation(self):
        perm = Xorshift64Star(9).permutation(100)
        self.assertEqual(sorted(perm), list(range(100)))
        self.assertEqual(perm, Xorshift64Star(9).permutation(100))

    def test_derive_seed_separates_streams(self):
        self.assertNotEqual(derive_seed(7, 1), derive_seed(7, 2))
        self.assertEqual(derive_seed(7, 1), derive_seed(7, 1))


if __name__ == "__main__":
    unittest.main()

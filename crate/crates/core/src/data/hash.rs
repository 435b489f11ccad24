const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
pub fn stable_hash64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Bucket index for a categorical value. Index 0 is reserved for missing
/// values; present values land in `[1, buckets - 1]`.
pub fn hash_field(field_id: &str, raw: Option<&str>, buckets: usize) -> u32 {
    debug_assert!(buckets >= 2);
    match raw {
        None => 0,
        Some(v) => {
            let mut key = Vec::with_capacity(field_id.len() + v.len() + 1);
            key.extend_from_slice(field_id.as_bytes());
            key.push(0x1f);
            key.extend_from_slice(v.as_bytes());
            (stable_hash64(&key) % (buckets as u64 - 1)) as u32 + 1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(stable_hash64(b""), 0xcbf29ce484222325);
        assert_eq!(stable_hash64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(stable_hash64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn deterministic_and_in_range() {
        for v in ["x", "y", "1234", ""] {
            let a = hash_field("f1", Some(v), 7);
            assert_eq!(a, hash_field("f1", Some(v), 7));
            assert!((1..=6).contains(&a));
        }
        assert_eq!(hash_field("f1", None, 7), 0);
    }

    #[test]
    fn field_id_participates() {
        let differs = (0..50)
            .filter(|i| {
                let v = i.to_string();
                hash_field("f1", Some(&v), 1000) != hash_field("f2", Some(&v), 1000)
            })
            .count();
        assert!(differs > 40);
    }

    #[test]
    fn bucket_load_is_balanced() {
        let b = 1000;
        let mut load = vec![0usize; b];
        let n = 20_000;
        for i in 0..n {
            load[hash_field("user_id", Some(&format!("u{i}")), b) as usize] += 1;
        }
        assert_eq!(load[0], 0);
        let mean = n as f64 / (b - 1) as f64;
        let max = *load.iter().max().unwrap() as f64;
        assert!(max <= 3.0 * mean, "max {max} mean {mean}");
    }
}

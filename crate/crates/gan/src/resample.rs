/// Linear interpolation of each channel of a channel-major `channels x from` array onto
/// `to` samples with both endpoints kept.
pub fn resample(data: &[f64], channels: usize, from: usize, to: usize) -> Vec<f64> {
    assert_eq!(data.len(), channels * from);
    if from == to {
        return data.to_vec();
    }
    let mut out = Vec::with_capacity(channels * to);
    for c in 0..channels {
        let src = &data[c * from..(c + 1) * from];
        for j in 0..to {
            if from == 1 {
                out.push(src[0]);
                continue;
            }
            let pos = if to == 1 { 0.0 } else { j as f64 * (from - 1) as f64 / (to - 1) as f64 };
            let i = (pos.floor() as usize).min(from - 2);
            let frac = pos - i as f64;
            out.push(src[i] + (src[i + 1] - src[i]) * frac);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(resample(&[0.0, 2.0], 1, 2, 3), vec![0.0, 1.0, 2.0]);
        assert_eq!(resample(&[1.0, 2.0, 3.0, 5.0, 5.0, 5.0], 2, 3, 3), vec![1.0, 2.0, 3.0, 5.0, 5.0, 5.0]);
        let ramp: Vec<f64> = (0..60).map(|i| i as f64).collect();
        let r = resample(&ramp, 1, 60, 64);
        assert_eq!(r[0], 0.0);
        assert_eq!(r[63], 59.0);
        for (j, v) in r.iter().enumerate() {
            assert!((v - j as f64 * 59.0 / 63.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn stays_within_channel_range(v in proptest::collection::vec(-10.0f64..10.0, 2..40), to in 2usize..80) {
            let r = resample(&v, 1, v.len(), to);
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r.iter().all(|x| *x >= lo - 1e-12 && *x <= hi + 1e-12));
        }
    }
}

//! Rational helpers.

use num_rational::Ratio;

pub type Q = Ratio<i128>;

#[must_use]
pub fn q(n: u64) -> Q {
    Q::from_integer(i128::from(n))
}

fn terminates(mut den: i128) -> bool {
    for p in [2, 5] {
        while den % p == 0 {
            den /= p;
        }
    }
    den == 1
}

/// Integers as `4`, terminating fractions as decimals (`4.5`, `4.25`),
/// everything else as `p/q`.
#[must_use]
pub fn fmt_q(x: &Q) -> String {
    let (n, d) = (*x.numer(), *x.denom());
    if d == 1 {
        return n.to_string();
    }
    if terminates(d) {
        // exact decimal expansion
        let (sign, n) = if n < 0 { ("-", -n) } else { ("", n) };
        let (int, mut rem) = (n / d, n % d);
        let mut digits = String::new();
        while rem != 0 {
            rem *= 10;
            digits.push(char::from(b'0' + (rem / d) as u8));
            rem %= d;
        }
        return format!("{sign}{int}.{digits}");
    }
    format!("{n}/{d}")
}

#[must_use]
pub fn to_f64(x: &Q) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display() {
        assert_eq!(fmt_q(&Q::new(9, 2)), "4.5");
        assert_eq!(fmt_q(&Q::new(17, 4)), "4.25");
        assert_eq!(fmt_q(&Q::new(128, 1)), "128");
        assert_eq!(fmt_q(&Q::new(1088, 9)), "1088/9");
        assert_eq!(fmt_q(&Q::new(131, 32)), "4.09375");
        assert_eq!(fmt_q(&Q::new(-3, 8)), "-0.375");
    }
}

const ONES: [&str; 20] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
    "nineteen",
];
const TENS: [&str; 10] = [
    "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];

pub const MAX_EXPANDABLE: u64 = 999_999;

fn below_thousand(n: u64, out: &mut Vec<&'static str>) {
    debug_assert!(n < 1000);
    let hundreds = n / 100;
    let rest = n % 100;
    if hundreds > 0 {
        out.push(ONES[hundreds as usize]);
        out.push("hundred");
    }
    if rest == 0 {
        return;
    }
    if rest < 20 {
        out.push(ONES[rest as usize]);
    } else {
        out.push(TENS[(rest / 10) as usize]);
        if rest % 10 != 0 {
            out.push(ONES[(rest % 10) as usize]);
        }
    }
}

/// English words for `0..=999_999`, e.g. 123 -> one hundred twenty three.
/// Returns `None` above the supported range.
pub fn number_to_words(n: u64) -> Option<Vec<&'static str>> {
    if n > MAX_EXPANDABLE {
        return None;
    }
    if n == 0 {
        return Some(vec!["zero"]);
    }
    let mut out = Vec::new();
    let thousands = n / 1000;
    if thousands > 0 {
        below_thousand(thousands, &mut out);
        out.push("thousand");
    }
    below_thousand(n % 1000, &mut out);
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expands_numbers() {
        let w = |n| number_to_words(n).unwrap().join(" ");
        assert_eq!(w(0), "zero");
        assert_eq!(w(2), "two");
        assert_eq!(w(15), "fifteen");
        assert_eq!(w(40), "forty");
        assert_eq!(w(123), "one hundred twenty three");
        assert_eq!(w(1000), "one thousand");
        assert_eq!(w(20_019), "twenty thousand nineteen");
        assert_eq!(w(999_999), "nine hundred ninety nine thousand nine hundred ninety nine");
        assert!(number_to_words(1_000_000).is_none());
    }
}

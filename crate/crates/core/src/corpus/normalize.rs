use unicode_general_category::{get_general_category, GeneralCategory as Gc};

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        Gc::ConnectorPunctuation
            | Gc::DashPunctuation
            | Gc::OpenPunctuation
            | Gc::ClosePunctuation
            | Gc::InitialPunctuation
            | Gc::FinalPunctuation
            | Gc::OtherPunctuation
    )
}

/// Lowercases, strips Unicode punctuation (category P) and collapses
/// whitespace runs to single spaces.
pub fn normalize(text: &str) -> String {
    let stripped: String = text.chars().filter(|&c| !is_punctuation(c)).collect();
    stripped
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

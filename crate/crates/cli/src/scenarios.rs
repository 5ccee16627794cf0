const BUNDLED: &[(&str, &str)] = &[
    ("crash-primary", include_str!("../scenarios/crash-primary.json")),
    ("equivocate", include_str!("../scenarios/equivocate.json")),
    ("fault-free", include_str!("../scenarios/fault-free.json")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

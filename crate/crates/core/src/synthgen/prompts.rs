//! Prompt templates for paraphrase (label 1) and distinct-query (label 0)
//! generation. The text is fixed apart from the `{domain_role}` and `{query}`
//! slots.

pub const PARAPHRASE_TEMPLATE: &str = r#"You are a helpful {domain_role}. Generate 2 unique paraphrases of the given query.
Original Query: '{query}'
Each paraphrase should:
1. Preserve the original meaning but use different wording or sentence structure.
2. Avoid changing medical intent or introducing new information.
3. Be professionally written and clear.
Example:
Original Query: "What are the best ways to reduce stress?"
Paraphrased Queries:
1. "How can a person effectively manage stress?"
2. "What strategies help in reducing stress levels?"
Return JSON with a key 'queries' containing a list of the two paraphrased versions."#;

pub const DISTINCT_TEMPLATE: &str = r#"You are a helpful {domain_role}. Given a medical query, generate two distinct but related queries that explore different aspects of the topic.
Guidelines:
1. The new queries should be related to the original but focus on different subtopics, perspectives, or medical contexts.
2. They should not be simple rewordings or slight variations of the original.
3. Consider different patient populations, alternative diagnostic methods, treatments, or physiological explanations.
Examples:
Original Query:
"How to reduce stress?"
 Distinct Queries:
1. "How can athletes manage stress during high-pressure competitions?" (Context: Sports Psychology)
2. "What are effective stress management strategies for children with ADHD?" (Context: Pediatric Stress Management)
Original Query:
"A 61-year-old woman with a long history of involuntary urine loss during activities like coughing or sneezing but no leakage at night undergoes a gynecological exam and Q-tip test. Based on these findings, what would cystometry most likely reveal about her residual volume and detrusor contractions?"
Distinct Queries:
1. "How does the Q-tip test help differentiate between stress urinary incontinence and urge incontinence?" (Context: Diagnostic Techniques)
2. "What are the treatment options for stress urinary incontinence in postmenopausal women, and how does cystometry aid in management?" (Context: Treatment & Management)

Now, generate two distinct queries for this input:
Original Query: {query}
Return JSON with 'queries' only."#;

pub const DEFAULT_DOMAIN_ROLE: &str = "medical expert";

/// Fills `{domain_role}` and `{query}` in one pass over the template, so
/// braces inside the substituted values are never expanded.
fn render(template: &str, domain_role: &str, query: &str) -> String {
    let mut out = String::with_capacity(template.len() + query.len() + domain_role.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        if let Some(after) = tail.strip_prefix("{query}") {
            out.push_str(query);
            rest = after;
        } else if let Some(after) = tail.strip_prefix("{domain_role}") {
            out.push_str(domain_role);
            rest = after;
        } else {
            out.push('{');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}

pub fn render_paraphrase_prompt(query: &str, domain_role: &str) -> String {
    render(PARAPHRASE_TEMPLATE, domain_role, query)
}

pub fn render_distinct_prompt(query: &str, domain_role: &str) -> String {
    render(DISTINCT_TEMPLATE, domain_role, query)
}

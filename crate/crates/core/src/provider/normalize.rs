use serde::{Deserialize, Serialize};

use super::{ChatMessage, ProviderError, ProviderKind, Role, Transcript};

/// Provider-neutral request body: a hoisted system prompt (for providers
/// that take it out of band) and the role-mapped message list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedChat {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub messages: Vec<WireMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: String,
    pub content: String,
}

/// Maps a transcript onto a provider's role vocabulary, preserving order
/// and content.
///
/// OpenAI-style providers keep system messages inline. Anthropic and Gemini
/// accept a system prompt only out of band, so leading system messages are
/// hoisted and any later one is rejected with `UnsupportedRole`.
pub fn normalize_transcript(
    transcript: &Transcript,
    provider: ProviderKind,
) -> Result<NormalizedChat, ProviderError> {
    normalize_messages(transcript.messages(), provider)
}

pub(crate) fn normalize_messages(
    messages: &[ChatMessage],
    provider: ProviderKind,
) -> Result<NormalizedChat, ProviderError> {
    let mut out = NormalizedChat::default();
    let hoists_system = matches!(provider, ProviderKind::Anthropic | ProviderKind::Gemini);
    let mut seen_turn = false;

    for msg in messages {
        let role = match (provider, msg.role) {
            (_, Role::System) if hoists_system => {
                if seen_turn {
                    return Err(ProviderError::UnsupportedRole {
                        role: msg.role,
                        provider,
                    });
                }
                match &mut out.system {
                    Some(sys) => {
                        sys.push_str("\n\n");
                        sys.push_str(&msg.content);
                    }
                    None => out.system = Some(msg.content.clone()),
                }
                continue;
            }
            (_, Role::System) => "system",
            (_, Role::User) => "user",
            (ProviderKind::Gemini, Role::Assistant) => "model",
            (_, Role::Assistant) => "assistant",
        };
        seen_turn = true;
        out.messages.push(WireMessage {
            role: role.to_string(),
            content: msg.content.clone(),
        });
    }
    Ok(out)
}

/// Rough token count (4 bytes per token plus per-message overhead).
pub fn estimate_tokens(message: &ChatMessage) -> u64 {
    (message.content.len() as u64).div_ceil(4) + 4
}

/// Drops the oldest non-system messages until the estimated input plus the
/// output budget fits in `context_tokens`. The final message is never
/// dropped, so the request may still overflow if it alone is too large.
pub fn fit_to_context(messages: &[ChatMessage], context_tokens: u32, budget: u32) -> Vec<ChatMessage> {
    let mut kept: Vec<ChatMessage> = messages.to_vec();
    let limit = u64::from(context_tokens);
    let mut total: u64 = kept.iter().map(estimate_tokens).sum::<u64>() + u64::from(budget);

    while total > limit {
        let last = kept.len().saturating_sub(1);
        let Some(idx) = kept[..last].iter().position(|m| m.role != Role::System) else {
            break;
        };
        total -= estimate_tokens(&kept[idx]);
        kept.remove(idx);
    }
    kept
}

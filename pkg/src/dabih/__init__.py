"""dabih: self-hosted encrypted data storage and sharing.

Two-stage envelope encryption: AES-256-CBC seals chunked file data at rest,
RSA-4096-OAEP encapsulates the per-dataset keys to users' public keys, so the
server never holds readable data and access is granted by re-encapsulating
keys to recipients.
"""

__version__ = "0.1.0"

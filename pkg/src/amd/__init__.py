VERSION_STRING = "v0.1.0-dev"
USER_AGENT = f"amd/{VERSION_STRING[1:]}"

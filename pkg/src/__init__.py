# Main package initialization